"""Entity extraction head: BiLSTM, IOB emission projection and a linear-chain CRF."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import numkit as nk
from .docdata import Entity, entities_from_tags
from .numkit import BiLSTM, ContractError, Linear, ParamStore, Tensor

MASKED = -10000.0


class TagSpace:
    """O plus B-/I- per class; start and end tags sit after the emitted ones."""

    def __init__(self, classes: Sequence[str]):
        self.classes = list(classes)
        self.tags = ["O"] + [f"{p}-{c}" for c in self.classes for p in ("B", "I")]
        self.index = {t: i for i, t in enumerate(self.tags)}

    @property
    def n_tags(self) -> int:
        return len(self.tags)

    @property
    def start(self) -> int:
        return self.n_tags

    @property
    def end(self) -> int:
        return self.n_tags + 1

    def encode(self, tags: Sequence[str]) -> list[int]:
        # tags of classes outside this space are treated as O
        return [self.index.get(t, 0) for t in tags]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tags[int(i)] for i in ids]

    def to_json(self) -> list[str]:
        return self.classes


def transition_mask(n_tags: int) -> tuple[np.ndarray, np.ndarray]:
    """(keep, fill): effective A = A * keep + fill.  Nothing enters start or leaves end."""
    size = n_tags + 2
    keep = np.ones((size, size))
    keep[:, n_tags] = 0.0
    keep[n_tags + 1, :] = 0.0
    return keep, (1.0 - keep) * MASKED


def effective_transitions(a: Tensor) -> Tensor:
    keep, fill = transition_mask(a.shape[0] - 2)
    return a * keep + fill


# -- single-sequence CRF (reference formulation) ------------------------------
def crf_score(h: Tensor, y: Sequence[int], a: Tensor) -> Tensor:
    """Path score: A[start, y1] + sum A[y_t, y_t+1] + A[yT, end] + sum H[t, y_t]."""
    h, a = nk.as_tensor(h), nk.as_tensor(a)
    steps, n = h.shape
    y = np.asarray(y, dtype=np.int64)
    if len(y) != steps:
        raise ContractError(f"tag sequence length {len(y)} != emission steps {steps}")
    if y.min() < 0 or y.max() >= n:
        raise ContractError(f"tag index outside [0, {n})")
    path = np.concatenate([[n], y, [n + 1]])
    size = a.shape[0]
    trans = nk.take(a, path[:-1] * size + path[1:]).sum()
    emit = nk.take(h, np.arange(steps) * n + y).sum()
    return trans + emit


def crf_log_partition(h: Tensor, a: Tensor) -> Tensor:
    """log sum over all tag paths of exp(score), by the forward algorithm."""
    h, a = nk.as_tensor(h), nk.as_tensor(a)
    steps, n = h.shape
    inner = a[:n, :n]
    alpha = a[n, :n] + h[0]
    for t in range(1, steps):
        alpha = nk.log_sum_exp(alpha.reshape(n, 1) + inner, axis=0) + h[t]
    return nk.log_sum_exp(alpha + a[:n, n + 1], axis=0)


def crf_nll(h: Tensor, y: Sequence[int], a: Tensor) -> Tensor:
    return crf_log_partition(h, a) - crf_score(h, y, a)


def viterbi(h, a) -> tuple[list[int], float]:
    """Best path and its score; among equal-scoring paths the lexicographically smallest wins."""
    hd = h.data if isinstance(h, Tensor) else np.asarray(h, dtype=np.float64)
    ad = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
    steps, n = hd.shape
    inner = ad[:n, :n]
    # beta[t, j]: best score of everything after choosing tag j at step t
    beta = np.zeros((steps, n))
    beta[-1] = ad[:n, n + 1]
    for t in range(steps - 2, -1, -1):
        beta[t] = np.max(inner + (hd[t + 1] + beta[t + 1])[None, :], axis=1)
    path = []
    cand = ad[n, :n] + hd[0] + beta[0]
    for t in range(steps):
        if t > 0:
            cand = inner[path[-1]] + hd[t] + beta[t]
        best = cand.max()
        tol = 1e-12 * max(1.0, abs(best))
        path.append(int(np.flatnonzero(cand >= best - tol)[0]))
    return path, float(crf_score(Tensor(hd), path, Tensor(ad)).data)


def extract_entities(text: str, tag_ids: Sequence[int], tag_space: TagSpace) -> list[Entity]:
    if len(tag_ids) != len(text):
        raise ContractError(f"{len(tag_ids)} tags for text of length {len(text)}")
    return entities_from_tags(text, tag_space.decode(tag_ids))


# -- batched CRF -----------------------------------------------------------------
def batched_crf_nll(h: Tensor, y: np.ndarray, mask: np.ndarray, a: Tensor) -> Tensor:
    """Per-sequence negative log-likelihood, shape (batch,).

    ``h`` is (batch, T, n); rows of ``mask`` must be left-aligned with length >= 1.
    """
    batch, steps, n = h.shape
    size = n + 2
    lengths = mask.sum(axis=1).astype(int)
    if lengths.min() < 1:
        raise ContractError("every sequence needs at least one step")
    a_eff = effective_transitions(a)
    inner = a_eff[:n, :n]
    alpha = a_eff[n, :n] + h[:, 0]
    for t in range(1, steps):
        nxt = nk.log_sum_exp(alpha.reshape(batch, n, 1) + inner, axis=1) + h[:, t]
        m = mask[:, t:t + 1]
        if m.all():
            alpha = nxt
        elif m.any():
            alpha = nk.where(m, nxt, alpha)
    log_z = nk.log_sum_exp(alpha + a_eff[:n, n + 1], axis=1)

    yy = np.where(mask, y, 0)
    emit_idx = (np.arange(batch)[:, None] * steps + np.arange(steps)[None, :]) * n + yy
    emit = (nk.take(h, emit_idx) * mask.astype(np.float64)).sum(axis=1)
    prev = np.concatenate([np.full((batch, 1), n), yy], axis=1)          # (batch, T+1)
    nxt_tags = np.concatenate([yy, np.full((batch, 1), n + 1)], axis=1)
    nxt_tags[np.arange(batch), lengths] = n + 1
    valid = np.arange(steps + 1)[None, :] <= lengths[:, None]
    trans_idx = np.where(valid, prev * size + nxt_tags, -1)
    trans = nk.take(a_eff, trans_idx).sum(axis=1)
    return log_z - emit - trans


class Extractor:
    def __init__(self, store: ParamStore, d_in: int, tag_space: TagSpace, d_lstm: int = 64,
                 prefix: str = "extractor"):
        self.tag_space = tag_space
        self.bilstm = BiLSTM(store, f"{prefix}.bilstm", d_in, d_lstm)
        self.proj = Linear(store, f"{prefix}.emission", 2 * d_lstm, tag_space.n_tags)
        self.transitions = store.new(f"{prefix}.transitions", (tag_space.n_tags + 2,) * 2,
                                     fan_in=tag_space.n_tags + 2)

    def emissions(self, u: Tensor, mask: np.ndarray) -> Tensor:
        return self.proj(self.bilstm(u, mask))

    def loss(self, u: Tensor, tags: np.ndarray, mask: np.ndarray) -> Tensor:
        nll = batched_crf_nll(self.emissions(u, mask), tags, mask, self.transitions)
        return nll.mean()

    def decode(self, u: Tensor, mask: np.ndarray) -> list[list[int]]:
        with nk.no_grad():
            em = self.emissions(u, mask).data
            a_eff = effective_transitions(self.transitions).data
        lengths = mask.sum(axis=1).astype(int)
        return [viterbi(em[k, :lengths[k]], a_eff)[0] if lengths[k] else [] for k in range(len(lengths))]
