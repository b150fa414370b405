"""Central finite differences: the independent oracle for every backward rule."""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Tensor, no_grad


def finite_difference_gradient(f: Callable[[Tensor], Tensor | float], x: Tensor | np.ndarray,
                               h: float = 1e-3) -> np.ndarray:
    """(f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate i of ``x``.

    ``x`` is perturbed in place and restored; ``f`` must read it afresh on
    every call.
    """
    if not 1e-6 <= h <= 1e-2:
        raise ValueError(f"step h={h} outside [1e-6, 1e-2]")
    arr = x.data if isinstance(x, Tensor) else x
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = _scalar(f(x))
            flat[i] = orig - h
            down = _scalar(f(x))
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
    return grad


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        return float(v.data.reshape(-1)[0])
    return float(v)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Norm-wise relative error |a - n| / max(|a|, |n|), floored to avoid 0/0."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(loss_fn: Callable[[], Tensor], params: Iterable[Tensor],
                    h: float = 1e-3) -> dict[str, float]:
    """Backprop ``loss_fn()`` once, then compare each param's grad to finite differences.

    Returns the relative error per parameter (keyed by name or position).
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss_fn().backward()
    report = {}
    for k, p in enumerate(params):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = finite_difference_gradient(lambda _: loss_fn(), p, h)
        report[p.name or f"param{k}"] = relative_error(analytic, numeric)
    return report
