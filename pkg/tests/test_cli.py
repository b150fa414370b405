import json

import pytest

from conftest import TINY_MODEL
from vrdie.cli import run
from vrdie.docdata import gold_entities, load_annotations

TRAIN = {"lr": 0.01, "epochs": 1, "batch_size": 2, "decay_epochs": []}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run(["gen-data", "--category", "III", "--count", "2", "--seed", "1", "--out", str(root / "train.json")]) == 0
    assert run(["gen-data", "--category", "III", "--count", "1", "--seed", "1", "--start", "2",
                "--out", str(root / "test.json")]) == 0
    cfg = {"data": {"train": "train.json", "test": "test.json"}, "train": TRAIN, "model": TINY_MODEL}
    (root / "cfg.json").write_text(json.dumps(cfg))
    return root


def config(root, **over):
    cfg = json.loads((root / "cfg.json").read_text())
    for k, v in over.items():
        cfg[k] = v
    path = root / f"cfg_{len(list(root.glob('cfg_*')))}.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_train_predict_eval(workspace, capsys):
    out = workspace / "run"
    cfg = str(workspace / "cfg.json")
    assert run(["train", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "checkpoints" / "model.trk").is_file()
    assert (out / "logs" / "train.jsonl").read_text().count("\n") == 1
    assert run(["predict", "--config", cfg, "--out", str(out)]) == 0
    preds = json.loads((out / "predictions" / "test.json").read_text())["documents"]
    assert len(preds) == 1 and {"bbox", "text_pred", "tags_pred", "entities"} <= set(preds[0][0])
    assert run(["eval", "--config", cfg, "--out", str(out)]) == 0
    report = json.loads((out / "reports" / "test.json").read_text())
    assert set(report) >= {"F_d-m", "F_r-m", "eF1"}
    assert "eF1" in capsys.readouterr().out


def test_gold_predictions_score_100(workspace):
    gold = load_annotations(workspace / "test.json")
    docs = [[{"bbox": i.box.as_list(), "text_pred": i.text,
              "entities": [{"class": e.cls, "value": e.value} for e in gold_entities(i)]}
             for i in d.instances] for d in gold]
    (workspace / "gold_preds.json").write_text(json.dumps({"documents": docs}))
    out = workspace / "gold"
    assert run(["eval", "--config", str(workspace / "cfg.json"), "--out", str(out),
                "--predictions", str(workspace / "gold_preds.json")]) == 0
    report = json.loads((out / "reports" / "test.json").read_text())
    assert report["eF1"] == report["F_r-m"] == report["rel_eF1"] == 100.0


@pytest.mark.parametrize("argv", [[], ["fly"], ["train", "--out", "x"],
                                  ["train", "--config", "/no/such.json", "--out", "x"],
                                  ["gen-data", "--category", "III", "--count", "0", "--out", "x.json"]])
def test_usage_errors_exit_1(argv, capsys):
    assert run(argv) == 1
    assert capsys.readouterr().err


def test_missing_data_file_exits_2(workspace, capsys):
    cfg = config(workspace, data={"train": "nope.json", "test": "test.json"})
    assert run(["train", "--config", cfg, "--out", str(workspace / "x")]) == 2
    assert "nope.json" in capsys.readouterr().err


def test_malformed_annotation_exits_2(workspace, capsys):
    (workspace / "bad.json").write_text('{"samples": [{"page_size": [10, 10], "category": "I", '
                                        '"instances": [{"bbox": [0, 0, 5, 5], "text": "ab", "tags": ["O"]}]}]}')
    cfg = config(workspace, data={"train": "bad.json", "test": "test.json"})
    assert run(["train", "--config", cfg, "--out", str(workspace / "x")]) == 2
    err = capsys.readouterr().err
    assert "bad.json" in err and "tags" in err


def test_bad_config_value_exits_2(workspace, capsys):
    cfg = config(workspace, train={**TRAIN, "lr": -1})
    assert run(["train", "--config", cfg, "--out", str(workspace / "x")]) == 2
    assert "lr" in capsys.readouterr().err


def test_missing_predictions_exit_2(workspace):
    assert run(["eval", "--config", str(workspace / "cfg.json"), "--out", str(workspace / "empty"),
                "--predictions", str(workspace / "none.json")]) == 2


def test_training_abort_exits_3(workspace):
    cfg = config(workspace, train={**TRAIN, "diverge_at": 1e-9})
    out = workspace / "abort"
    assert run(["train", "--config", cfg, "--out", str(out)]) == 3
    assert (out / "checkpoints" / "last_good.trk").is_file()


def test_ablate_custom_grid(workspace, capsys):
    grid = [{"name": "text", "model": {"context": {"use_layout": False, "use_visual": False}}},
            {"name": "full"}]
    cfg = config(workspace, ablate={"grid": grid, "seeds": [0]})
    out = workspace / "ablate"
    assert run(["ablate", "--config", cfg, "--out", str(out)]) == 0
    rows = json.loads((out / "reports" / "ablation.json").read_text())
    assert [(r["cell"], r["seed"]) for r in rows] == [("text", 0), ("full", 0), ("text", "mean"), ("full", "mean")]
    assert "full [mean]" in (out / "reports" / "ablation.txt").read_text()


def test_ablate_unknown_grid_exits_2(workspace):
    cfg = config(workspace, ablate={"grid": "colours"})
    assert run(["ablate", "--config", cfg, "--out", str(workspace / "x")]) == 2
