"""Detection, end-to-end spotting and entity-level evaluation, micro-averaged."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .docdata import BoundingBox, Entity

Box = BoundingBox


@dataclass
class MatchReport:
    true_positives: int = 0
    false_positives: int = 0
    false_negatives: int = 0
    pairs: list[tuple[int, int]] = field(default_factory=list)

    def __iadd__(self, other: "MatchReport") -> "MatchReport":
        self.true_positives += other.true_positives
        self.false_positives += other.false_positives
        self.false_negatives += other.false_negatives
        return self

    def triple(self) -> "MetricTriple":
        return MetricTriple.from_counts(self.true_positives, self.false_positives, self.false_negatives)


@dataclass(frozen=True)
class MetricTriple:
    precision: Fraction
    recall: Fraction
    f1: Fraction

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "MetricTriple":
        p = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        r = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        f = 2 * p * r / (p + r) if p + r else Fraction(0)
        return cls(p, r, f)

    def as_floats(self) -> dict[str, float]:
        return {"precision": float(self.precision), "recall": float(self.recall), "f1": float(self.f1)}


def iou(a: Box, b: Box) -> Fraction:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return Fraction(0)
    inter = iw * ih
    return Fraction(inter, a.width * a.height + b.width * b.height - inter)


def greedy_match(preds: Sequence[Box], golds: Sequence[Box], threshold: float = 0.5,
                 compatible=None) -> MatchReport:
    """One-to-one matching in descending IoU order; a pair needs IoU > threshold."""
    thr = Fraction(threshold).limit_denominator(10**9)
    cands = []
    for i, p in enumerate(preds):
        for j, g in enumerate(golds):
            if compatible is not None and not compatible(i, j):
                continue
            v = iou(p, g)
            if v > thr:
                cands.append((-v, i, j))
    cands.sort()
    used_p, used_g, pairs = set(), set(), []
    for _, i, j in cands:
        if i not in used_p and j not in used_g:
            used_p.add(i)
            used_g.add(j)
            pairs.append((i, j))
    tp = len(pairs)
    return MatchReport(tp, len(preds) - tp, len(golds) - tp, pairs)


def detection_metrics(preds: Sequence[Sequence[Box]], golds: Sequence[Sequence[Box]],
                      threshold: float = 0.5) -> MetricTriple:
    """Per-document box lists in, one corpus-level triple out."""
    total = MatchReport()
    for p, g in zip(preds, golds, strict=True):
        total += greedy_match(p, g, threshold)
    return total.triple()


def spotting_match(preds: Sequence[tuple[Box, str]], golds: Sequence[tuple[Box, str]],
                   threshold: float = 0.5) -> MatchReport:
    same = lambda i, j: preds[i][1] == golds[j][1]
    return greedy_match([b for b, _ in preds], [b for b, _ in golds], threshold, same)


def spotting_metrics(preds: Sequence[Sequence[tuple[Box, str]]], golds: Sequence[Sequence[tuple[Box, str]]],
                     threshold: float = 0.5) -> MetricTriple:
    """Box IoU > threshold and exact, case-sensitive transcript equality."""
    total = MatchReport()
    for p, g in zip(preds, golds, strict=True):
        total += spotting_match(p, g, threshold)
    return total.triple()


def cared_subset(preds: Sequence[tuple[Box, str]], golds: Sequence[tuple[Box, str]],
                 cared: Sequence[bool], threshold: float = 0.5):
    """Keep cared golds and the predictions that do not land on an uncared gold."""
    thr = Fraction(threshold).limit_denominator(10**9)
    other = [g for g, c in zip(golds, cared) if not c]
    keep_p = [p for p in preds if not any(iou(p[0], g[0]) > thr for g in other)]
    keep_g = [g for g, c in zip(golds, cared) if c]
    return keep_p, keep_g


def entity_match(pred: Iterable[Entity], gold: Iterable[Entity]) -> MatchReport:
    pc, gc = Counter(pred), Counter(gold)
    tp = sum((pc & gc).values())
    return MatchReport(tp, sum(pc.values()) - tp, sum(gc.values()) - tp)


def entity_metrics(pred_entities: Sequence[Iterable[Entity]], gold_entities: Sequence[Iterable[Entity]]) -> MetricTriple:
    """Exact (class, value) multiset matching within each document, micro-averaged."""
    total = MatchReport()
    for p, g in zip(pred_entities, gold_entities, strict=True):
        total += entity_match(p, g)
    return total.triple()


def relative_ie(ef1, cared_spotting_f1):
    """eF1 divided by the spotting F-measure on cared instances; None when undefined."""
    if cared_spotting_f1 == 0:
        return None
    if isinstance(ef1, Fraction) and isinstance(cared_spotting_f1, Fraction):
        return ef1 / cared_spotting_f1
    return float(ef1) / float(cared_spotting_f1)


# -- reports --------------------------------------------------------------------
COLUMNS = ["REC_d", "PRE_d", "F_d-m", "REC_r", "PRE_r", "F_r-m", "eREC", "ePRE", "eF1"]


def report_row(detection: MetricTriple, spotting: MetricTriple, entity: MetricTriple) -> dict[str, float]:
    vals = []
    for t in (detection, spotting, entity):
        vals += [t.recall, t.precision, t.f1]
    return {c: round(100.0 * float(v), 2) for c, v in zip(COLUMNS, vals)}


def format_table(rows: Sequence[tuple[str, dict]], columns: Sequence[str] = COLUMNS) -> str:
    """Aligned plain-text table; missing cells print as '-'."""
    names = [r[0] for r in rows]
    w0 = max([len("run")] + [len(n) for n in names])
    widths = [max(len(c), 6) for c in columns]
    head = "run".ljust(w0) + "  " + "  ".join(c.rjust(w) for c, w in zip(columns, widths))
    lines = [head, "-" * len(head)]
    for name, vals in rows:
        cells = []
        for c, w in zip(columns, widths):
            v = vals.get(c)
            cells.append(("-" if v is None else f"{v:.2f}").rjust(w))
        lines.append(name.ljust(w0) + "  " + "  ".join(cells))
    return "\n".join(lines) + "\n"
