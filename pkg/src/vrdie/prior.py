"""Gated absorption of prior language-model knowledge into textual features."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import numkit as nk
from .numkit import BiLSTM, ContractError, Linear, ParamStore, Tensor

FUSIONS = ("gating", "sum", "concat")
PRIOR_MODELS = ("toy", "frozen-toy", "none")


class PriorModel(Protocol):
    name: str
    width: int

    def encode(self, char_indices: np.ndarray, mask: np.ndarray) -> Tensor:
        """(batch, T) indices -> (batch, T, width) knowledge vectors."""


class ToyPrior:
    """Character embedding followed by a one-layer bidirectional LSTM."""

    def __init__(self, store: ParamStore, vocab_size: int, width: int = 32, name: str = "toy",
                 prefix: str = "prior.lm"):
        if width % 2:
            raise ValueError(f"prior width must be even, got {width}")
        self.name, self.width, self.prefix = name, width, prefix
        self.embed = store.new(f"{prefix}.embed", (vocab_size, width), fan_in=width)
        self.rnn = BiLSTM(store, f"{prefix}.rnn", width, width // 2)

    def encode(self, char_indices: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
        idx = np.atleast_2d(char_indices)
        if mask is None:
            mask = np.ones(idx.shape, dtype=bool)
        return self.rnn(nk.embedding_lookup(self.embed, idx), mask)


def toy_prior_encode(prior: ToyPrior, char_indices) -> Tensor:
    """Single-sequence convenience wrapper: length-T indices -> (T, width)."""
    out = prior.encode(np.asarray(char_indices)[None, :])
    return out.reshape(out.shape[1], out.shape[2])


def project_to_vocab(z: Tensor, head: Linear) -> np.ndarray:
    """Per-step argmax over vocabulary logits; ties go to the lowest index."""
    return nk.argmax_rowwise(head(z))


@dataclass
class GateParams:
    w_g: Tensor
    u_g: Tensor
    b_g: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_o: Tensor

    @classmethod
    def create(cls, store: ParamStore, d_a: int, d_s: int, prefix: str = "prior.gate") -> "GateParams":
        n = lambda k, shape, fan: store.new(f"{prefix}.{k}", shape, fan_in=fan)
        return cls(n("w_g", (d_a, d_s), d_a), n("u_g", (d_s, d_s), d_s), n("b_g", (d_s,), d_s),
                   n("w_r", (d_a, d_s), d_a), n("u_r", (d_s, d_s), d_s), n("b_r", (d_s,), d_s),
                   n("w_o", (d_s, d_s), d_s))


def gate_values(z: Tensor, a: Tensor, gate: GateParams) -> tuple[Tensor, Tensor]:
    g = nk.sigmoid(a @ gate.w_g + z @ gate.u_g + gate.b_g)
    r = nk.tanh(a @ gate.w_r + z @ gate.u_r + gate.b_r)
    return g, r


def gated_absorb(z: Tensor, a: Tensor, gate: GateParams) -> Tensor:
    """o = sigmoid(W_g a + U_g z + b_g) * tanh(W_r a + U_r z + b_r) + W_o z, per step."""
    if z.shape[:-1] != a.shape[:-1]:
        raise ContractError(f"knowledge steps {a.shape[:-1]} do not match textual steps {z.shape[:-1]}")
    g, r = gate_values(z, a, gate)
    return g * r + z @ gate.w_o


class PriorAbsorber:
    """Projection head + prior model + fusion of its knowledge into z."""

    def __init__(self, store: ParamStore, vocab_size: int, d_state: int, model: str = "toy",
                 fusion: str = "gating", d_prior: int = 32, prefix: str = "prior"):
        if model not in PRIOR_MODELS:
            raise ValueError(f"unknown prior model {model!r}; expected one of {PRIOR_MODELS}")
        if fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {fusion!r}; expected one of {FUSIONS}")
        self.model_name, self.fusion, self.prefix = model, fusion, prefix
        self.vocab_head = Linear(store, f"{prefix}.vocab_head", d_state, vocab_size)
        self.lm = None if model == "none" else ToyPrior(store, vocab_size, d_prior, model, f"{prefix}.lm")
        if model == "frozen-toy":
            store.freeze(f"{prefix}.lm.")
        if fusion == "gating":
            self.gate = GateParams.create(store, d_prior, d_state, f"{prefix}.gate")
        elif fusion == "sum":
            self.w_a = store.new(f"{prefix}.sum.w_a", (d_prior, d_state), fan_in=d_prior)
            self.w_o = store.new(f"{prefix}.sum.w_o", (d_state, d_state), fan_in=d_state)
        else:
            self.mix = Linear(store, f"{prefix}.concat", d_prior + d_state, d_state)

    def __call__(self, z: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """Returns (o, vocab_logits).  z is (batch, T, d_state)."""
        logits = self.vocab_head(z)
        if self.lm is None:
            a = Tensor(np.zeros(z.shape[:-1] + (self._width(),)))
        else:
            chars = nk.argmax_rowwise(logits) * mask
            a = self.lm.encode(chars, mask)
        if self.fusion == "gating":
            o = gated_absorb(z, a, self.gate)
        elif self.fusion == "sum":
            o = a @ self.w_a + z @ self.w_o
        else:
            o = self.mix(nk.concat([a, z], axis=-1))
        return o, logits

    def _width(self) -> int:
        if self.fusion == "gating":
            return self.gate.w_g.shape[0]
        if self.fusion == "sum":
            return self.w_a.shape[0]
        return self.mix.w.shape[0] - self.mix.w.shape[1]
