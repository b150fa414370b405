"""Dense float64 tensors with reverse-mode differentiation.

Every tensor created while grad mode is on records its parents and a
closure that maps the upstream gradient to per-parent gradients.  Node
ids grow monotonically, so sorting reachable nodes by id gives a valid
topological order without recursion.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""


class ContractError(RuntimeError):
    """A caller broke an operation precondition."""


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- graph plumbing -------------------------------------------------
    @classmethod
    def _make(cls, data: np.ndarray, parents: tuple["Tensor", ...], backward) -> "Tensor":
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every trainable leaf.

        Gradients add to whatever is already stored, so calling this twice
        without zeroing doubles them.
        """
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        nodes = _reachable(self)
        upstream: dict[int, np.ndarray] = {self.node_id: np.ones_like(self.data)}
        owned: set[int] = set()  # buffers allocated here, safe to update in place
        for node in nodes:
            g = upstream.pop(node.node_id, None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = parent.node_id
                if isinstance(pg, _Scatter):
                    if key not in owned:
                        buf = np.zeros(parent.shape)
                        if key in upstream:
                            buf += upstream[key]
                        upstream[key] = buf
                        owned.add(key)
                    pg.add_into(upstream[key])
                elif key not in upstream:
                    upstream[key] = pg
                elif key in owned:
                    upstream[key] += pg
                else:
                    upstream[key] = upstream[key] + pg
                    owned.add(key)

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _reachable(root: Tensor) -> list[Tensor]:
    seen = {root.node_id: root}
    stack = [root]
    while stack:
        node = stack.pop()
        for p in node._parents:
            if p.requires_grad and p.node_id not in seen:
                seen[p.node_id] = p
                stack.append(p)
    return [seen[k] for k in sorted(seen, reverse=True)]


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise -----------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._make(a.data + b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._make(a.data * b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), lambda g: (-g,))


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return Tensor._make(out, (a,), lambda g: (-g * out * out,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor._make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._make(a.data * mask, (a,), lambda g: (g * mask,))


# -- linear algebra and shape ---------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    ka = a.shape[-1]
    kb = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if ka != kb:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ad, bd = a.data, b.data
        if bd.ndim == 1:
            ga = np.multiply.outer(g, bd)
            gb = np.tensordot(ad, g, axes=(tuple(range(ad.ndim - 1)), tuple(range(g.ndim))))
            return ga, gb
        if ad.ndim == 1:
            ga = np.matmul(g, np.swapaxes(bd, -1, -2))
            gb = np.multiply.outer(ad, g) if bd.ndim == 2 else ad[:, None] * g[..., None, :]
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        if bd.ndim == 2:
            # fold the batch axes of a into one contraction: cheaper than unbroadcast
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), b.shape)
        return _unbroadcast(ga, a.shape), gb

    return Tensor._make(out, (a, b), bw)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return Tensor._make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is not None and len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    out = np.transpose(a.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return Tensor._make(out, (a,), lambda g: (np.transpose(g, inv),))


class _Scatter:
    """A gradient that is zero except on ``idx``; the engine adds it into a dense buffer."""
    __slots__ = ("idx", "g", "basic")

    def __init__(self, idx, g: np.ndarray, basic: bool):
        self.idx, self.g, self.basic = idx, g, basic

    def add_into(self, buf: np.ndarray) -> None:
        if self.basic:
            buf[self.idx] += self.g
        else:
            np.add.at(buf, self.idx, self.g)


def slice_(a: Tensor, idx) -> Tensor:
    out = a.data[idx]
    basic = _is_basic_index(idx)
    return Tensor._make(np.array(out, dtype=np.float64), (a,), lambda g: (_Scatter(idx, g, basic),))


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bw(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors)))

    return Tensor._make(out, tuple(tensors), bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    nd = tensors[0].ndim + 1
    ax = axis % nd
    expanded = [reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in tensors]
    return concat(expanded, axis=ax)


def take(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather from the flattened tensor; index -1 reads an implicit zero."""
    index = np.asarray(index, dtype=np.int64)
    flat = np.concatenate([a.data.reshape(-1), [0.0]])
    out = flat[index]

    size = a.data.size
    slots = np.where(index < 0, size, index).reshape(-1)

    def bw(g):
        full = np.bincount(slots, weights=g.reshape(-1), minlength=size + 1)
        return (full[:size].reshape(a.shape),)

    return Tensor._make(out, (a,), bw)


def embedding_lookup(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError(f"embedding_lookup: index outside [0, {table.shape[0] - 1}]")
    out = table.data[idx]

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return Tensor._make(out, (table,), bw)


# -- reductions -----------------------------------------------------------
def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._make(np.asarray(out, dtype=np.float64), (a,), bw)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) / float(n)


def max_pool_1d(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Global max over ``axis``; positions where ``mask`` is False are ignored.

    Ties send the gradient to the first maximal position.
    """
    if a.shape[axis] == 0:
        raise ShapeError(f"max_pool_1d: empty axis in shape {a.shape}")
    x = a.data
    if mask is not None:
        x = np.where(np.broadcast_to(mask, x.shape), x, -np.inf)
    arg = np.argmax(x, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return Tensor._make(out, (a,), bw)


def softmax_rowwise(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis.  ``mask`` False entries get probability 0."""
    if a.shape[-1] == 0:
        raise ShapeError(f"softmax_rowwise: empty last axis in shape {a.shape}")
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor._make(out, (a,), bw)


def log_softmax(a: Tensor) -> Tensor:
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))
    out = x - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return Tensor._make(out, (a,), bw)


def log_sum_exp(a: Tensor, axis: int = -1) -> Tensor:
    if a.shape[axis] == 0:
        raise ShapeError(f"log_sum_exp: empty axis in shape {a.shape}")
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (m + np.log(s)).squeeze(axis)
    p = e / s

    def bw(g):
        return (np.expand_dims(g, axis) * p,)

    return Tensor._make(out, (a,), bw)


def layer_normalize(a: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
                    eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then apply gamma/beta."""
    x = a.data
    n = x.shape[-1]
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        return (inv * (g - g.mean(axis=-1, keepdims=True)
                       - xhat * (g * xhat).sum(axis=-1, keepdims=True) / n),)

    out = Tensor._make(xhat, (a,), bw)
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out


def argmax_rowwise(a) -> np.ndarray:
    """Index of the row maximum over the last axis; ties go to the lowest index."""
    data = a.data if isinstance(a, Tensor) else np.asarray(a)
    return np.argmax(data, axis=-1)


def where(mask: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where mask is True else ``b``; mask is a constant."""
    a, b = as_tensor(a), as_tensor(b)
    m = np.asarray(mask, dtype=bool)
    try:
        out = np.where(m, a.data, b.data)
    except ValueError:
        raise ShapeError(f"where: shapes {m.shape}, {a.shape}, {b.shape} do not broadcast") from None
    mf = m.astype(np.float64)

    def bw(g):
        return _unbroadcast(g * mf, a.shape), _unbroadcast(g * (1.0 - mf), b.shape)

    return Tensor._make(out, (a, b), bw)


def lstm_cell(gates: Tensor, c: Tensor) -> Tensor:
    """Fused LSTM state update from pre-activation gates (i, f, g, o blocks).

    Returns ``[h_new, c_new]`` concatenated on the last axis.
    """
    d = c.shape[-1]
    if gates.shape[-1] != 4 * d or gates.shape[:-1] != c.shape[:-1]:
        raise ShapeError(f"lstm_cell: gates {gates.shape} vs state {c.shape}")
    z = gates.data
    i = _sigmoid(z[..., :d])
    f = _sigmoid(z[..., d:2 * d])
    gg = np.tanh(z[..., 2 * d:3 * d])
    o = _sigmoid(z[..., 3 * d:])
    c_new = f * c.data + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc

    def bw(grad):
        gh, gc = grad[..., :d], grad[..., d:]
        dc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([dc * gg * i * (1.0 - i), dc * c.data * f * (1.0 - f),
                             dc * i * (1.0 - gg * gg), gh * tc * o * (1.0 - o)], axis=-1)
        return dz, dc * f

    return Tensor._make(np.concatenate([h_new, c_new], axis=-1), (gates, c), bw)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
