"""Run one of the declared grids (modality, fusion, mode) on synthetic receipts.

    python3 scripts/run_grid.py modality --seeds 0 1 2 --out results/modality.json

Uses the desk-scale schedule from the acceptance suite: 80 training and 20
held-out Category III documents, batch 1, lr 1e-2, 10 epochs.
"""
import argparse
import json
import logging
import time
from pathlib import Path

from vrdie.experiment import GRIDS, grid_table, run_grid
from vrdie.synth import synthesize_documents

DESK_TRAIN = {"lr": 1e-2, "batch_size": 1, "epochs": 10, "decay_epochs": [9]}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("grid", choices=sorted(GRIDS))
    ap.add_argument("--category", default="III")
    ap.add_argument("--train", type=int, default=80)
    ap.add_argument("--test", type=int, default=20)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--epochs", type=int, default=DESK_TRAIN["epochs"])
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default=None, help="write report rows as JSON")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    docs = synthesize_documents(args.category, args.train + args.test, seed=0)
    base = {**DESK_TRAIN, "epochs": args.epochs, "decay_epochs": [args.epochs - 1]}
    t0 = time.perf_counter()
    rows = run_grid(GRIDS[args.grid], args.seeds, docs[:args.train], docs[args.train:], base, {}, args.jobs)
    print(grid_table(rows), end="")
    print(f"{time.perf_counter() - t0:.0f}s")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(rows, indent=1))


if __name__ == "__main__":
    main()
