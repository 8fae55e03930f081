"""Finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tape, Tensor, no_grad


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def largest_components(grad: np.ndarray, count: int) -> list[int]:
    """Flat indices of the ``count`` largest-magnitude entries of ``grad``."""
    flat = np.abs(grad).reshape(-1)
    count = min(count, flat.size)
    return sorted(np.argsort(flat, kind='stable')[::-1][:count].tolist())


def analytic_gradients(f: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    with Tape() as tape:
        loss = f(*inputs)
    grads = tape.backward(loss, inputs)
    return [grads[id(t)] for t in inputs]


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-6,
    indices: Optional[Sequence[Optional[Sequence[int]]]] = None,
) -> float:
    """Maximum relative error between reverse-mode and central-difference gradients.

    ``f`` maps the input tensors to a scalar tensor and must be deterministic.
    Finite differences are always evaluated in 64-bit on promoted copies of the
    inputs; the analytic gradient comes from the inputs' own precision.
    ``indices`` optionally restricts the checked components per input (flat indices).
    """
    inputs = list(inputs)
    analytic = analytic_gradients(f, inputs)

    originals = [t.data for t in inputs]
    worst = 0.0
    try:
        for t in inputs:
            t.data = t.data.astype(np.float64)
        with no_grad():
            for pos, t in enumerate(inputs):
                checked = indices[pos] if indices is not None else None
                if checked is None:
                    checked = range(t.size)
                flat = t.data.reshape(-1)
                for i in checked:
                    saved = flat[i]
                    flat[i] = saved + eps
                    f_plus = float(f(*inputs).data)
                    flat[i] = saved - eps
                    f_minus = float(f(*inputs).data)
                    flat[i] = saved
                    numeric = (f_plus - f_minus) / (2.0 * eps)
                    worst = max(worst, relative_error(float(analytic[pos].reshape(-1)[i]), numeric))
    finally:
        for t, data in zip(inputs, originals):
            t.data = data
    return worst
