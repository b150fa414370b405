"""Declared experiment grids and a runner that trains, evaluates and tabulates cells."""
from __future__ import annotations

import copy
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .docdata import DocumentSample
from .evaluation import evaluate
from .metrics import COLUMNS, format_table
from .model import ModelConfig
from .trainkit import TrainConfig, train


@dataclass
class Cell:
    name: str
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)


def _modality(text=True, layout=False, visual=False) -> dict:
    return {"context": {"use_textual": text, "use_layout": layout, "use_visual": visual}}


GRIDS: dict[str, list[Cell]] = {
    "modality": [
        Cell("text", _modality()),
        Cell("text+layout", _modality(layout=True)),
        Cell("text+visual", _modality(visual=True)),
        Cell("text+layout+visual", _modality(layout=True, visual=True)),
    ],
    "fusion": [
        Cell(f"{prior}/{fusion}", {"context": {"prior": prior, "fusion": fusion}})
        for prior in ("none", "toy") for fusion in ("gating", "sum", "concat")
    ],
    "mode": [Cell(m, train={"mode": m}) for m in ("base1", "base2", "e2e")],
}


def merge(base: dict, over: dict) -> dict:
    """Recursive dict update returning a new dict; ``over`` wins on leaves."""
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_cells(spec) -> list[Cell]:
    """A grid name, or a list of {"name", "model", "train"} objects."""
    if isinstance(spec, str):
        if spec not in GRIDS:
            raise ValueError(f"unknown grid {spec!r}; expected one of {sorted(GRIDS)}")
        return GRIDS[spec]
    cells = []
    for k, c in enumerate(spec):
        if "name" not in c:
            raise ValueError(f"grid[{k}] has no 'name'")
        cells.append(Cell(c["name"], c.get("model", {}), c.get("train", {})))
    return cells


def build_configs(base_train: dict, base_model: dict, cell: Cell, seed: int) -> tuple[TrainConfig, ModelConfig]:
    tc = TrainConfig(**merge(merge(base_train, cell.train), {"seed": seed}))
    mc = ModelConfig.from_dict(merge(base_model, cell.model))
    return tc, mc


def run_cell(train_docs: Sequence[DocumentSample], test_docs: Sequence[DocumentSample],
             tc: TrainConfig, mc: ModelConfig) -> dict:
    """Train one configuration and score it on ``test_docs``."""
    model = train(train_docs, tc, mc).model
    return evaluate(model, model.prepare(test_docs))


def _job(args):
    name, seed, train_docs, test_docs, tc, mc = args
    return {"cell": name, "seed": seed, **run_cell(train_docs, test_docs, tc, mc)}


def run_grid(cells: Sequence[Cell], seeds: Sequence[int], train_docs, test_docs,
             base_train: dict | None = None, base_model: dict | None = None, jobs: int = 1) -> list[dict]:
    """Per-(cell, seed) report rows followed by one seed-mean row per cell."""
    base_train, base_model = base_train or {}, base_model or {}
    work = []
    for cell in cells:
        for seed in seeds:
            tc, mc = build_configs(base_train, base_model, cell, seed)
            work.append((cell.name, seed, train_docs, test_docs, tc, mc))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_job, work))
    else:
        rows = [_job(w) for w in work]
    return rows + [mean_row(c.name, [r for r in rows if r["cell"] == c.name]) for c in cells]


def mean_row(name: str, rows: Sequence[dict]) -> dict:
    out = {"cell": name, "seed": "mean"}
    for col in list(COLUMNS) + ["rel_eF1"]:
        vals = [r[col] for r in rows if r.get(col) is not None]
        out[col] = round(sum(vals) / len(vals), 2) if vals else None
    return out


def grid_table(rows: Sequence[dict]) -> str:
    return format_table([(f"{r['cell']} [{r['seed']}]", r) for r in rows], list(COLUMNS) + ["rel_eF1"])
