"""Command-line entry point: gen-data, train, predict, eval, ablate.

Exit codes: 0 success, 1 usage, 2 data error, 3 training abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .docdata import (CATEGORIES, AnnotationParseError, DocumentSample, ValidationError, Vocabulary,
                      load_annotations, save_annotations)
from .evaluation import score_predictions
from .experiment import build_configs, grid_table, parse_cells, run_grid
from .model import DocumentIE, ModelConfig
from .numkit import checkpoint
from .synth import synthesize_documents
from .trainkit import TrainConfig, TrainingAbort, save_config, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ABORT = 0, 1, 2, 3
OUT_DIRS = ("checkpoints", "logs", "predictions", "reports")

log = logging.getLogger("vrdie")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vrdie", description="End-to-end reading and information extraction on synthetic documents.")
    sub = p.add_subparsers(dest="verb", metavar="VERB", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic annotation file plus PGM rasters")
    g.add_argument("--category", required=True, choices=CATEGORIES)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--start", type=int, default=0, help="index of the first generated document")
    g.add_argument("--out", required=True, help="annotation JSON path")

    for verb, text in (("train", "train a model"), ("predict", "run a trained model"),
                       ("eval", "score predictions against gold"), ("ablate", "run an experiment grid")):
        s = sub.add_parser(verb, help=text)
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, default=None, help="override train.seed")
        if verb in ("predict", "eval"):
            s.add_argument("--data", default=None, help="annotation file (default: config data.test)")
        if verb == "predict":
            s.add_argument("--checkpoint", default=None)
        if verb == "eval":
            s.add_argument("--predictions", default=None)
        if verb == "ablate":
            s.add_argument("--jobs", type=int, default=None)
    return p


# -- config and data -----------------------------------------------------------
def load_config(path: str) -> tuple[dict, Path]:
    cfg_path = Path(path)
    if not cfg_path.is_file():
        raise UsageError(f"config file {cfg_path} does not exist")
    try:
        cfg = json.loads(cfg_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{cfg_path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise DataError(f"{cfg_path}: top level must be an object")
    return cfg, cfg_path.parent


def data_path(cfg: dict, base: Path, key: str, override: str | None = None) -> Path:
    if override:
        return Path(override)
    rel = cfg.get("data", {}).get(key)
    if rel is None:
        raise DataError(f"config has no data.{key}")
    p = Path(rel)
    return p if p.is_absolute() else base / p


def read_samples(path: Path) -> list[DocumentSample]:
    if not path.is_file():
        raise DataError(f"annotation file {path} does not exist")
    try:
        samples = load_annotations(path)
    except (AnnotationParseError, ValidationError) as exc:
        raise DataError(f"{path}: {exc}") from None
    for k, s in enumerate(samples):
        if s.raster is None:
            raise DataError(f"{path}: samples[{k}] has no raster")
    return samples


def section(cfg: dict, name: str, cls, seed: int | None = None):
    body = dict(cfg.get(name, {}))
    if seed is not None:
        body["seed"] = seed
    try:
        return cls.from_dict(body) if hasattr(cls, "from_dict") else cls(**body)
    except (TypeError, ValueError) as exc:
        raise DataError(f"config section {name!r}: {exc}") from None


def out_dirs(root: str) -> Path:
    out = Path(root)
    for d in OUT_DIRS:
        (out / d).mkdir(parents=True, exist_ok=True)
    return out


# -- checkpoints -----------------------------------------------------------------
def save_model(model: DocumentIE, path: Path) -> None:
    checkpoint.save(path, model.state())
    meta = {"vocab": model.vocab.to_json(), "classes": model.tag_space.classes,
            "model": model.cfg.to_dict()}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1))


def load_model(path: Path) -> DocumentIE:
    meta_path = path.with_suffix(".json")
    for p in (path, meta_path):
        if not p.is_file():
            raise DataError(f"checkpoint file {p} does not exist")
    meta = json.loads(meta_path.read_text())
    model = DocumentIE(Vocabulary.from_json(meta["vocab"]), meta["classes"],
                       ModelConfig.from_dict(meta["model"]))
    try:
        model.load_state(checkpoint.load(path))
    except (checkpoint.CheckpointError, KeyError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None
    return model


# -- verbs -------------------------------------------------------------------------
def cmd_gen_data(args) -> int:
    if args.count < 1:
        raise UsageError(f"--count must be >= 1, got {args.count}")
    samples = synthesize_documents(args.category, args.count, args.seed, start=args.start)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_annotations(out, samples)
    log.info("wrote %d category %s documents to %s", len(samples), args.category, out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, base = load_config(args.config)
    tc = section(cfg, "train", TrainConfig, args.seed)
    mc = section(cfg, "model", ModelConfig)
    samples = read_samples(data_path(cfg, base, "train"))
    held = read_samples(data_path(cfg, base, "heldout")) if cfg.get("data", {}).get("heldout") else None
    out = out_dirs(args.out)
    save_config(out / "config.json", tc, mc)
    try:
        result = train(samples, tc, mc, heldout=held)
    except TrainingAbort as exc:
        log.error("training aborted: %s", exc)
        if exc.state is not None:
            checkpoint.save(out / "checkpoints" / "last_good.trk", exc.state)
        return EXIT_ABORT
    save_model(result.model, out / "checkpoints" / "model.trk")
    with open(out / "logs" / "train.jsonl", "w") as fh:
        for row in result.log:
            fh.write(json.dumps(row) + "\n")
    log.info("checkpoint written to %s", out / "checkpoints" / "model.trk")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg, base = load_config(args.config)
    out = out_dirs(args.out)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoints" / "model.trk"
    model = load_model(ckpt)
    path = data_path(cfg, base, "test", args.data)
    samples = read_samples(path)
    preds = model.predict(model.prepare(samples))
    target = out / "predictions" / f"{path.stem}.json"
    target.write_text(json.dumps({"documents": [[p.to_json() for p in doc] for doc in preds]}, indent=1))
    log.info("predictions written to %s", target)
    return EXIT_OK


def read_predictions(path: Path) -> list[list[dict]]:
    if not path.is_file():
        raise DataError(f"prediction file {path} does not exist")
    try:
        docs = json.loads(path.read_text())["documents"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: not a prediction file ({exc})") from None
    for k, doc in enumerate(docs):
        for j, p in enumerate(doc):
            missing = {"bbox", "text_pred", "entities"} - set(p)
            if missing:
                raise DataError(f"{path}: documents[{k}][{j}] lacks {sorted(missing)}")
    return docs


def cmd_eval(args) -> int:
    cfg, base = load_config(args.config)
    out = out_dirs(args.out)
    path = data_path(cfg, base, "test", args.data)
    golds = read_samples(path)
    pred_path = Path(args.predictions) if args.predictions else out / "predictions" / f"{path.stem}.json"
    try:
        report = score_predictions(golds, read_predictions(pred_path))
    except (ValueError, ValidationError) as exc:
        raise DataError(f"{pred_path}: {exc}") from None
    (out / "reports" / f"{path.stem}.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    table = grid_table([{"cell": path.stem, "seed": "-", **report}])
    (out / "reports" / f"{path.stem}.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg, base = load_config(args.config)
    spec = cfg.get("ablate", {})
    try:
        cells = parse_cells(spec.get("grid", "modality"))
    except ValueError as exc:
        raise DataError(f"config section 'ablate': {exc}") from None
    seeds = [args.seed] if args.seed is not None else list(spec.get("seeds", [0]))
    train_docs = read_samples(data_path(cfg, base, "train"))
    test_docs = read_samples(data_path(cfg, base, "test"))
    out = out_dirs(args.out)
    jobs = args.jobs or int(spec.get("jobs", 1))
    # validate every cell before spending compute on any of them
    for cell in cells:
        try:
            build_configs(cfg.get("train", {}), cfg.get("model", {}), cell, seeds[0])
        except (TypeError, ValueError) as exc:
            raise DataError(f"ablation cell {cell.name!r}: {exc}") from None
    try:
        rows = run_grid(cells, seeds, train_docs, test_docs, cfg.get("train", {}), cfg.get("model", {}), jobs)
    except TrainingAbort as exc:
        log.error("training aborted: %s", exc)
        return EXIT_ABORT
    (out / "reports" / "ablation.json").write_text(json.dumps(rows, indent=1))
    table = grid_table(rows)
    (out / "reports" / "ablation.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


VERBS = {"gen-data": cmd_gen_data, "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval,
         "ablate": cmd_ablate}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verb is None:
            raise UsageError(parser.format_help())
        return VERBS[args.verb](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
