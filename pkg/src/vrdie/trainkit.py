"""Joint optimization: loss weighting, AdamW, step-decay schedule and the training loop."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numkit as nk
from .docdata import DocumentSample, Vocabulary, build_vocabulary, entity_classes
from .evaluation import evaluate
from .model import DocumentIE, ModelConfig, PreparedDoc
from .numkit import Tensor

log = logging.getLogger(__name__)

MODES = ("e2e", "base1", "base2")
# reader parts retrained on their own in base1, after the conv front end is frozen
BASE1_SEQUENCE_PARTS = ("reader.encoder", "reader.att", "reader.char_embed", "reader.decoder",
                        "reader.out")


class TrainingAbort(RuntimeError):
    def __init__(self, msg: str, state: dict | None = None):
        super().__init__(msg)
        self.state = state


@dataclass
class TrainConfig:
    lambda_recog: float = 1.0
    lambda_info: float = 1.0
    lambda_aux: float = 0.1
    lambda_focus: float = 1.0
    lr: float = 1e-4
    decay_epochs: list[int] = field(default_factory=lambda: [5, 7, 8])
    batch_size: int = 4
    epochs: int = 10
    seed: int = 0
    mode: str = "e2e"
    weight_decay: float = 0.01
    clip_norm: float = 5.0
    diverge_at: float = 1e6
    lr_scale: dict[str, float] = field(default_factory=dict)  # name prefix -> lr multiplier
    info_warmup: int = 0  # e2e only: leading epochs trained on the reading losses alone

    def __post_init__(self):
        if min(self.lambda_recog, self.lambda_info, self.lambda_aux, self.lambda_focus) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if any(v <= 0 for v in self.lr_scale.values()):
            raise ValueError(f"lr_scale multipliers must be positive, got {self.lr_scale}")
        if not 0 <= self.info_warmup < self.epochs:
            raise ValueError(f"info_warmup must be in [0, epochs), got {self.info_warmup}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")


def joint_loss(l_det, l_recog: Tensor, l_info: Tensor, cfg: TrainConfig) -> Tensor:
    """L = L_det + lambda_recog * L_recog + lambda_info * L_info."""
    return nk.as_tensor(l_det) + l_recog * cfg.lambda_recog + l_info * cfg.lambda_info


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr * 0.1 ** sum(1 for e in cfg.decay_epochs if e <= epoch)


def param_lr(name: str, lr: float, cfg: TrainConfig) -> float:
    """Base rate times the multiplier of the longest matching ``lr_scale`` prefix."""
    best = max((k for k in cfg.lr_scale if name.startswith(k)), key=len, default=None)
    return lr if best is None else lr * cfg.lr_scale[best]


class AdamW:
    """Adam moments with bias correction plus decoupled weight decay.

    Parameters without a gradient are skipped entirely (no decay, no step
    count), so a module that joins training late starts with fresh moments.
    """

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def step(self, params: dict[str, Tensor], lr: float | dict[str, float]) -> None:
        """One update; ``lr`` is a single rate or a per-parameter mapping."""
        for name, p in params.items():
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise TrainingAbort(f"non-finite gradient in parameter {name!r}")
        b1, b2 = self.beta1, self.beta2
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            rate = lr[name] if isinstance(lr, dict) else lr
            t = self.t[name] = self.t.get(name, 0) + 1
            m = self.m.setdefault(name, np.zeros_like(p.data))
            v = self.v.setdefault(name, np.zeros_like(p.data))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            step = (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + self.eps)
            p.data = p.data * (1 - rate * self.weight_decay) - rate * step


def optimizer_step(params: dict[str, Tensor], state: AdamW, lr: float) -> None:
    state.step(params, lr)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad ** 2).sum()) for p in params if p.grad is not None))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


@dataclass
class TrainResult:
    model: DocumentIE
    log: list[dict]


def phase_loss(parts: dict[str, Tensor], phase: str, cfg: TrainConfig) -> Tensor:
    """Scalar objective for one training phase.

    joint  L_det + lambda_recog*L_recog + lambda_info*L_info, plus focus and aux terms
    recog  reading losses only
    info   extraction loss plus the aux vocab-head term, reader detached
    """
    if phase == "recog":
        return parts["recog"] * cfg.lambda_recog + parts["focus"] * cfg.lambda_focus
    if phase == "info":
        return parts["info"] * cfg.lambda_info + parts["aux"] * cfg.lambda_aux
    return (joint_loss(0.0, parts["recog"], parts["info"], cfg) + parts["focus"] * cfg.lambda_focus
            + parts["aux"] * cfg.lambda_aux)


class Trainer:
    def __init__(self, model: DocumentIE, cfg: TrainConfig):
        self.model, self.cfg = model, cfg
        self.opt = AdamW(weight_decay=cfg.weight_decay)
        self.rng = np.random.default_rng(cfg.seed)
        self.log: list[dict] = []
        self._last_good = model.state()

    def _params(self) -> dict[str, Tensor]:
        store = self.model.store
        return {n: t for n, t in store.tensors.items() if n not in store.frozen}

    def _step(self, loss: Tensor, lr: float) -> float:
        value = float(loss.data)
        if not math.isfinite(value) or value > self.cfg.diverge_at:
            self.model.load_state(self._last_good)
            raise TrainingAbort(f"loss diverged ({value:.4g}); restored last epoch checkpoint",
                                self._last_good)
        params = self._params()
        self.model.store.zero_grad()
        loss.backward()
        clip_grad_norm(list(params.values()), self.cfg.clip_norm)
        rates = {n: param_lr(n, lr, self.cfg) for n in params} if self.cfg.lr_scale else lr
        self.opt.step(params, rates)
        return value

    def _losses(self, batch, phase: str) -> dict[str, Tensor]:
        if phase == "recog":
            return self.model.recognition_only(batch)
        return self.model.losses(batch, detach_reader=(phase == "info"))

    def run_phase(self, docs: Sequence[PreparedDoc], phase: str, epochs: int,
                  heldout: Sequence[PreparedDoc] | None = None, first_epoch: int = 0) -> None:
        """Epochs ``first_epoch .. epochs-1`` of one phase; the lr schedule follows the epoch index."""
        cfg = self.cfg
        for epoch in range(first_epoch, epochs):
            lr = lr_at(epoch, cfg)
            order = self.rng.permutation(len(docs))
            sums: dict[str, float] = {}
            batches = 0
            for start in range(0, len(order), cfg.batch_size):
                batch = [docs[i] for i in order[start:start + cfg.batch_size]]
                parts = self._losses(batch, phase)
                self._step(phase_loss(parts, phase, cfg), lr)
                for k, v in parts.items():
                    sums[k] = sums.get(k, 0.0) + float(v.data)
                batches += 1
            row = {"phase": phase, "epoch": epoch, "lr": lr,
                   **{f"loss_{k}": v / batches for k, v in sums.items()}}
            if heldout:
                row["eval"] = evaluate(self.model, heldout)
            self.log.append(row)
            log.info("%s", json.dumps(row))
            self._last_good = self.model.state()


def train(samples: Sequence[DocumentSample], cfg: TrainConfig, model_cfg: ModelConfig | None = None,
          heldout: Sequence[DocumentSample] | None = None, vocab: Vocabulary | None = None,
          classes: Sequence[str] | None = None) -> TrainResult:
    """Train a fresh model under ``cfg.mode``.

    e2e    all losses through shared reader weights, ``epochs`` epochs; the first
           ``info_warmup`` of them train the reading losses alone.
    base2  reader on the recognition loss, then frozen; extraction trained on top.
    base1  like base2, but the feature convs are trained and frozen before the
           sequence encoder/decoder is re-initialized and trained on its own.
    """
    if not samples:
        raise ValueError("empty training corpus")
    vocab = vocab or build_vocabulary(samples)
    classes = classes or entity_classes(samples)
    model = DocumentIE(vocab, classes, model_cfg, seed=cfg.seed)
    docs = model.prepare(samples)
    held = model.prepare(heldout) if heldout else None
    trainer = Trainer(model, cfg)
    if cfg.mode == "e2e":
        if cfg.info_warmup:
            trainer.run_phase(docs, "recog", cfg.info_warmup)
        trainer.run_phase(docs, "joint", cfg.epochs, held, first_epoch=cfg.info_warmup)
    else:
        trainer.run_phase(docs, "recog", cfg.epochs)
        if cfg.mode == "base1":
            model.store.freeze("reader.conv")
            for k, prefix in enumerate(BASE1_SEQUENCE_PARTS):
                model.store.reinitialize(prefix, cfg.seed + 1 + k)
            trainer.opt = AdamW(weight_decay=cfg.weight_decay)
            trainer.run_phase(docs, "recog", cfg.epochs)
        model.store.freeze("reader.")
        trainer.opt = AdamW(weight_decay=cfg.weight_decay)
        trainer.run_phase(docs, "info", cfg.epochs, held)
    return TrainResult(model, trainer.log)


def save_config(path: str | Path, cfg: TrainConfig, model_cfg: ModelConfig) -> None:
    Path(path).write_text(json.dumps({"train": asdict(cfg), "model": model_cfg.to_dict()}, indent=2))
