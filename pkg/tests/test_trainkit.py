import math

import numpy as np
import pytest

from conftest import TINY_MODEL
from vrdie import numkit as nk
from vrdie.docdata import build_vocabulary, entity_classes
from vrdie.model import DocumentIE, ModelConfig
from vrdie.numkit import Tensor
from vrdie.trainkit import (AdamW, TrainConfig, Trainer, TrainingAbort, clip_grad_norm, joint_loss,
                            lr_at, param_lr, train)


def tiny(samples, seed=0):
    return DocumentIE(build_vocabulary(samples), entity_classes(samples), ModelConfig.from_dict(TINY_MODEL), seed)


# -- optimizer ---------------------------------------------------------------------

def test_first_adamw_step_moves_by_lr():
    p = nk.parameter(np.array([1.0, -2.0, 3.0]))
    p.grad = np.array([0.3, -5.0, 1e-3])
    AdamW(weight_decay=0.0).step({"p": p}, 0.1)
    # bias-corrected m / sqrt(v) is sign(g) on the first step
    np.testing.assert_allclose(p.data, [0.9, -1.9, 2.9], atol=1e-6)


def test_decoupled_weight_decay():
    p = nk.parameter(np.array([2.0]))
    p.grad = np.array([0.0])
    AdamW(weight_decay=0.5).step({"p": p}, 0.1)
    np.testing.assert_allclose(p.data, [2.0 * (1 - 0.05)], atol=1e-12)


def test_zero_and_missing_gradients():
    p, q = nk.parameter(np.ones(3)), nk.parameter(np.ones(3))
    p.grad = np.zeros(3)
    opt = AdamW(weight_decay=0.0)
    opt.step({"p": p, "q": q}, 0.1)
    np.testing.assert_array_equal(p.data, 1.0)
    np.testing.assert_array_equal(q.data, 1.0)
    assert "q" not in opt.t


def test_late_parameter_gets_fresh_bias_correction():
    p, q = nk.parameter(np.zeros(1)), nk.parameter(np.zeros(1))
    opt = AdamW(weight_decay=0.0)
    for _ in range(5):
        p.grad = np.ones(1)
        opt.step({"p": p, "q": q}, 0.1)
    q.grad = np.ones(1)
    opt.step({"p": p, "q": q}, 0.1)
    np.testing.assert_allclose(q.data, [-0.1], atol=1e-6)


def test_non_finite_gradient_names_parameter():
    p = nk.parameter(np.ones(2))
    p.grad = np.array([1.0, np.nan])
    with pytest.raises(TrainingAbort, match="'enc.w'"):
        AdamW().step({"enc.w": p}, 0.1)
    np.testing.assert_array_equal(p.data, 1.0)


def test_clip_grad_norm():
    a, b = nk.parameter(np.zeros(1)), nk.parameter(np.zeros(1))
    a.grad, b.grad = np.array([3.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == 5.0
    np.testing.assert_allclose([a.grad[0], b.grad[0]], [0.6, 0.8])


# -- schedule and config -------------------------------------------------------------

def test_lr_schedule_examples():
    cfg = TrainConfig(lr=1.0, decay_epochs=[5, 7, 8])
    assert [lr_at(e, cfg) for e in (0, 4, 5, 7, 8, 9)] == pytest.approx([1, 1, 0.1, 0.01, 0.001, 0.001])


def test_param_lr_longest_prefix_wins():
    cfg = TrainConfig(lr=1.0, lr_scale={"context.": 0.5, "context.rel": 4.0})
    assert param_lr("context.rel_tables", 0.1, cfg) == pytest.approx(0.4)
    assert param_lr("context.ln_g", 0.1, cfg) == pytest.approx(0.05)
    assert param_lr("reader.out.w", 0.1, cfg) == 0.1


def test_joint_loss_is_linear_in_weights():
    r, i = Tensor(np.array(2.0)), Tensor(np.array(3.0))
    base = float(joint_loss(1.0, r, i, TrainConfig()).data)
    assert base == 6.0
    assert float(joint_loss(1.0, r, i, TrainConfig(lambda_recog=2.0, lambda_info=0.5)).data) == 1 + 4 + 1.5


@pytest.mark.parametrize("bad", [{"lr": 0}, {"lambda_info": -1}, {"mode": "pipeline"},
                                 {"lr_scale": {"reader.": 0}}, {"info_warmup": 10}])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


# -- gradient flow ---------------------------------------------------------------------

def reader_grad_from_info(model, docs, detach):
    model.store.zero_grad()
    model.losses(docs, detach_reader=detach)["info"].backward()
    return sum(float(np.abs(t.grad).sum()) for n, t in model.store.tensors.items()
               if n.startswith("reader.") and t.grad is not None)


def test_extraction_gradient_reaches_reader_only_end_to_end(receipts):
    model = tiny(receipts)
    docs = model.prepare(receipts[:1])
    assert reader_grad_from_info(model, docs, detach=False) > 0
    assert reader_grad_from_info(model, docs, detach=True) == 0


def test_pipeline_keeps_reader_frozen(receipts):
    cfg = TrainConfig(lr=1e-2, epochs=1, batch_size=2, mode="base2", decay_epochs=[])
    trainer_states = {}
    model = tiny(receipts)
    docs = model.prepare(receipts)
    t = Trainer(model, cfg)
    t.run_phase(docs, "recog", 1)
    model.store.freeze("reader.")
    trainer_states["before"] = {n: v for n, v in model.state().items() if n.startswith("reader.")}
    t.run_phase(docs, "info", 1)
    after = model.state()
    for n, v in trainer_states["before"].items():
        np.testing.assert_array_equal(after[n], v)
    assert not np.array_equal(after["extractor.transitions"], tiny(receipts).state()["extractor.transitions"])


# -- training loop ---------------------------------------------------------------------

def test_identical_runs_are_identical(receipts):
    cfg = TrainConfig(lr=1e-2, epochs=2, batch_size=1, seed=3, decay_epochs=[])
    a = train(receipts, cfg, ModelConfig.from_dict(TINY_MODEL)).model.state()
    b = train(receipts, cfg, ModelConfig.from_dict(TINY_MODEL)).model.state()
    assert a.keys() == b.keys()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_divergence_aborts_and_restores(receipts):
    cfg = TrainConfig(lr=1e-2, epochs=1, diverge_at=1e-6)
    with pytest.raises(TrainingAbort, match="diverged") as info:
        train(receipts, cfg, ModelConfig.from_dict(TINY_MODEL))
    fresh = tiny(receipts).state()
    assert all(np.array_equal(info.value.state[k], fresh[k]) for k in fresh)


@pytest.mark.parametrize("mode", ["e2e", "base1", "base2"])
def test_every_mode_runs(receipts, mode):
    cfg = TrainConfig(lr=1e-2, epochs=1, batch_size=2, mode=mode, decay_epochs=[])
    res = train(receipts, cfg, ModelConfig.from_dict(TINY_MODEL))
    phases = [row["phase"] for row in res.log]
    assert phases == {"e2e": ["joint"], "base2": ["recog", "info"], "base1": ["recog", "recog", "info"]}[mode]
    assert all(math.isfinite(v) for row in res.log for k, v in row.items() if k.startswith("loss_"))


def test_info_warmup_runs_reading_first(receipts):
    cfg = TrainConfig(lr=1e-2, epochs=3, batch_size=2, info_warmup=2, decay_epochs=[1])
    log = train(receipts, cfg, ModelConfig.from_dict(TINY_MODEL)).log
    assert [(r["phase"], r["epoch"], r["lr"]) for r in log] == [
        ("recog", 0, 1e-2), ("recog", 1, pytest.approx(1e-3)), ("joint", 2, pytest.approx(1e-3))]


def test_end_to_end_fits_one_document(invoices):
    model = tiny(invoices[:1])
    docs = model.prepare(invoices[:1])
    cfg = TrainConfig(lr=1e-2, epochs=1, batch_size=1, decay_epochs=[])
    t = Trainer(model, cfg)
    info = None
    for step in range(300):
        parts = model.losses(docs)
        info = float(parts["info"].data)
        if info < 0.05:
            break
        t._step(parts["recog"] + parts["info"] + parts["focus"] + parts["aux"] * 0.1, cfg.lr)
    assert info < 0.05, f"info loss {info:.3f} after {step} steps"
