"""AdamW with decoupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import NumericalError, ShapeError
from .models import OptimizerConfig


@dataclass
class OptimizerState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(cls, params: Mapping[str, np.ndarray]) -> 'OptimizerState':
        return cls(
            step=0,
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
        )


def adamw_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    cfg: OptimizerConfig,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One update; returns new parameter arrays and a new state.

    θ ← θ − lr·m̂/(√v̂ + eps) − lr·wd·θ, with bias-corrected moments m̂ and v̂.
    """
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f'gradient for unknown parameter {name!r}')
        if g.shape != params[name].shape:
            raise ShapeError(f'gradient for {name!r} has shape {g.shape}, parameter has {params[name].shape}')
        if not np.all(np.isfinite(g)):
            raise NumericalError(f'non-finite gradient for parameter {name!r} at step {state.step + 1}')

    step = state.step + 1
    correction1 = 1.0 - cfg.beta1 ** step
    correction2 = 1.0 - cfg.beta2 ** step
    new_params, new_m, new_v = {}, {}, {}
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        m_prev = state.m.get(name)
        v_prev = state.v.get(name)
        m = cfg.beta1 * (m_prev if m_prev is not None else 0.0) + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * (v_prev if v_prev is not None else 0.0) + (1.0 - cfg.beta2) * g * g
        update = (m / correction1) / (np.sqrt(v / correction2) + cfg.eps)
        new_params[name] = (theta - cfg.lr * update - cfg.lr * cfg.weight_decay * theta).astype(theta.dtype)
        new_m[name] = np.asarray(m, dtype=theta.dtype)
        new_v[name] = np.asarray(v, dtype=theta.dtype)
    return new_params, OptimizerState(step=step, m=new_m, v=new_v)
