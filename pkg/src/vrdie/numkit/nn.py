"""Parameter store and the small layer library shared by every stage."""
from __future__ import annotations

from collections import OrderedDict
from functools import lru_cache

import numpy as np

from .tensor import (ContractError, Tensor, add, concat, lstm_cell, matmul, mul, parameter,
                     stack, take, where)


class ParamStore:
    """Named, seeded parameter registry.

    Init is uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] unless a constant
    init is requested.  Creation order is fixed by the code path, so the same
    seed always yields the same weights.
    """

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self.tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        self.frozen: set[str] = set()
        self._init: dict[str, tuple] = {}

    def _draw(self, rng, shape, fan_in, init, value) -> np.ndarray:
        if init == "uniform":
            bound = 1.0 / np.sqrt(fan_in if fan_in else shape[0])
            return rng.uniform(-bound, bound, size=shape)
        if init == "const":
            return np.full(shape, float(value))
        raise ValueError(f"unknown init {init!r}")

    def new(self, name: str, shape, fan_in: int | None = None, init: str = "uniform",
            value: float = 0.0) -> Tensor:
        if name in self.tensors:
            raise ContractError(f"parameter {name!r} registered twice")
        shape = tuple(int(s) for s in shape)
        t = parameter(self._draw(self.rng, shape, fan_in, init, value), name=name)
        self.tensors[name] = t
        self._init[name] = (fan_in, init, value)
        return t

    def reinitialize(self, prefix: str, seed: int) -> list[str]:
        """Redraw every parameter under ``prefix`` with its original init rule."""
        rng = np.random.default_rng(seed)
        names = self.names(prefix)
        for n in names:
            t = self.tensors[n]
            t.data = self._draw(rng, t.shape, *self._init[n])
        return names

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.tensors if n.startswith(prefix)]

    def trainable(self) -> list[Tensor]:
        return [t for n, t in self.tensors.items() if n not in self.frozen]

    def freeze(self, prefix: str) -> None:
        self.frozen.update(self.names(prefix))

    def unfreeze(self, prefix: str = "") -> None:
        self.frozen.difference_update(self.names(prefix))

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for n, arr in state.items():
            if n not in self.tensors:
                raise KeyError(f"checkpoint has unknown parameter {n!r}")
            if self.tensors[n].shape != arr.shape:
                raise ValueError(f"parameter {n!r}: shape {arr.shape} != {self.tensors[n].shape}")
            self.tensors[n].data = np.array(arr, dtype=np.float64)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, bias: bool = True,
                 zero: bool = False):
        init = "const" if zero else "uniform"
        self.w = store.new(f"{name}.w", (d_in, d_out), fan_in=d_in, init=init)
        self.b = store.new(f"{name}.b", (d_out,), fan_in=d_in, init=init) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)


class LSTM:
    """Single-layer LSTM over (batch, time, feature) with a validity mask.

    Masked steps carry the previous state through unchanged and emit zeros.
    Gate order in the fused weight is input, forget, cell, output.
    """

    def __init__(self, store: ParamStore, name: str, d_in: int, d_hidden: int):
        self.d_hidden = d_hidden
        self.wx = store.new(f"{name}.wx", (d_in, 4 * d_hidden), fan_in=d_hidden)
        self.wh = store.new(f"{name}.wh", (d_hidden, 4 * d_hidden), fan_in=d_hidden)
        self.b = store.new(f"{name}.b", (4 * d_hidden,), fan_in=d_hidden)

    def cell(self, x_proj: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        hc = lstm_cell(add(x_proj, matmul(h, self.wh)), c)
        d = self.d_hidden
        return hc[:, :d], hc[:, d:]

    def __call__(self, xs: Tensor, mask: np.ndarray | None = None) -> Tensor:
        batch, steps, _ = xs.shape
        proj = add(matmul(xs, self.wx), self.b)
        h = Tensor(np.zeros((batch, self.d_hidden)))
        c = Tensor(np.zeros((batch, self.d_hidden)))
        outs = []
        for t in range(steps):
            h_new, c_new = self.cell(proj[:, t], h, c)
            if mask is None or mask[:, t].all():
                h, c = h_new, c_new
                outs.append(h)
                continue
            m = mask[:, t:t + 1]
            h = where(m, h_new, h)
            c = where(m, c_new, c)
            outs.append(mul(h_new, m.astype(np.float64)))
        return stack(outs, axis=1)


def reverse_padded(xs: Tensor, lengths: np.ndarray) -> Tensor:
    """Reverse each batch row within its own valid length; padding stays in place."""
    batch, steps = xs.shape[0], xs.shape[1]
    rest = int(np.prod(xs.shape[2:]))
    src = np.tile(np.arange(steps), (batch, 1))
    for b, n in enumerate(lengths):
        src[b, :n] = np.arange(n)[::-1]
    flat = (np.arange(batch)[:, None] * steps + src)[:, :, None] * rest + np.arange(rest)
    return take(xs, flat.reshape(xs.shape))


class BiLSTM:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_hidden: int):
        self.fwd = LSTM(store, f"{name}.fwd", d_in, d_hidden)
        self.bwd = LSTM(store, f"{name}.bwd", d_in, d_hidden)

    def __call__(self, xs: Tensor, mask: np.ndarray) -> Tensor:
        lengths = mask.sum(axis=1).astype(int)
        f = self.fwd(xs, mask)
        rb = self.bwd(reverse_padded(xs, lengths), mask)
        return concat([f, reverse_padded(rb, lengths)], axis=-1)


@lru_cache(maxsize=256)
def _im2col_2d(batch: int, rows: int, cols: int, chans: int, k: int) -> np.ndarray:
    r = k // 2
    b = np.arange(batch)[:, None, None, None, None, None]
    y = np.arange(rows)[None, :, None, None, None, None] + np.arange(-r, r + 1)[None, None, None, :, None, None]
    x = np.arange(cols)[None, None, :, None, None, None] + np.arange(-r, r + 1)[None, None, None, None, :, None]
    c = np.arange(chans)[None, None, None, None, None, :]
    flat = ((b * rows + y) * cols + x) * chans + c
    valid = (y >= 0) & (y < rows) & (x >= 0) & (x < cols)
    idx = np.where(valid, flat, -1)
    return np.broadcast_to(idx, (batch, rows, cols, k, k, chans)).reshape(batch, rows, cols, k * k * chans)


@lru_cache(maxsize=256)
def _im2col_1d(batch: int, steps: int, chans: int, k: int) -> np.ndarray:
    r = k // 2
    b = np.arange(batch)[:, None, None, None]
    t = np.arange(steps)[None, :, None, None] + np.arange(-r, r + 1)[None, None, :, None]
    c = np.arange(chans)[None, None, None, :]
    flat = (b * steps + t) * chans + c
    idx = np.where((t >= 0) & (t < steps), flat, -1)
    return np.broadcast_to(idx, (batch, steps, k, chans)).reshape(batch, steps, k * chans)


class Conv2d:
    """'Same'-padded 2-D convolution on channels-last (batch, rows, cols, chans)."""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, k: int = 3,
                 zero: bool = False):
        self.k, self.c_in = k, c_in
        init = "const" if zero else "uniform"
        self.w = store.new(f"{name}.w", (k * k * c_in, c_out), fan_in=k * k * c_in, init=init)
        self.b = store.new(f"{name}.b", (c_out,), fan_in=k * k * c_in, init=init)

    def __call__(self, x: Tensor) -> Tensor:
        batch, rows, cols, chans = x.shape
        if chans != self.c_in:
            raise ValueError(f"conv expects {self.c_in} channels, got shape {x.shape}")
        patches = take(x, _im2col_2d(batch, rows, cols, chans, self.k))
        return add(matmul(patches, self.w), self.b)


class Conv1d:
    """'Same'-padded 1-D convolution on (batch, steps, chans)."""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, k: int,
                 zero: bool = False):
        self.k, self.c_in = k, c_in
        init = "const" if zero else "uniform"
        self.w = store.new(f"{name}.w", (k * c_in, c_out), fan_in=k * c_in, init=init)
        self.b = store.new(f"{name}.b", (c_out,), fan_in=k * c_in, init=init)

    def __call__(self, x: Tensor) -> Tensor:
        batch, steps, chans = x.shape
        patches = take(x, _im2col_1d(batch, steps, chans, self.k))
        return add(matmul(patches, self.w), self.b)
