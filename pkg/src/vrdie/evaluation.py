"""Corpus evaluation of model predictions against gold annotations."""
from __future__ import annotations

from typing import Sequence

from .docdata import BoundingBox, DocumentSample, Entity
from .metrics import (MetricTriple, cared_subset, detection_metrics, entity_metrics, relative_ie,
                      report_row, spotting_metrics)


def score_predictions(golds: Sequence[DocumentSample], preds: Sequence[Sequence[dict]]) -> dict:
    """Score per-document prediction records ({"bbox", "text_pred", "entities"}) against golds."""
    if len(golds) != len(preds):
        raise ValueError(f"{len(preds)} prediction documents for {len(golds)} gold documents")
    det_p, det_g, spot_p, spot_g, cared_p, cared_g, ent_p, ent_g = ([] for _ in range(8))
    for gold, pred in zip(golds, preds):
        pb = [(BoundingBox(*p["bbox"]), p["text_pred"]) for p in pred]
        gb = [(i.box, i.text) for i in gold.instances]
        det_p.append([b for b, _ in pb])
        det_g.append([b for b, _ in gb])
        spot_p.append(pb)
        spot_g.append(gb)
        cared = [any(t != "O" for t in i.tags) for i in gold.instances]
        kp, kg = cared_subset(pb, gb, cared)
        cared_p.append(kp)
        cared_g.append(kg)
        ent_p.append([Entity(e["class"], e["value"]) for p in pred for e in p["entities"]])
        ent_g.append(gold.entities())
    return report(detection_metrics(det_p, det_g), spotting_metrics(spot_p, spot_g),
                  entity_metrics(ent_p, ent_g), spotting_metrics(cared_p, cared_g))


def report(det: MetricTriple, spot: MetricTriple, ent: MetricTriple, cared_spot: MetricTriple) -> dict:
    rel = relative_ie(ent.f1, cared_spot.f1)
    row = report_row(det, spot, ent)
    row["rel_eF1"] = None if rel is None else round(100.0 * float(rel), 2)
    return row


def evaluate(model, docs) -> dict:
    """Run ``model.predict`` on prepared documents and score the result."""
    preds = model.predict(docs)
    return score_predictions([d.sample for d in docs], [[p.to_json() for p in doc] for doc in preds])
