"""Adam with per-array moment buffers, global-norm clipping, lr schedule."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, MutableMapping, Optional

import numpy as np

from ..errors import TrainingDivergedError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(
    params: MutableMapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> AdamState:
    """One bias-corrected Adam update, in place on `params`.

    Arrays without a gradient are left alone but still share the step counter.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient in parameter group {name.split('.', 1)[0]!r} ({name})")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: Mapping[str, np.ndarray], max_norm: Optional[float]) -> Dict[str, np.ndarray]:
    """Rescale all gradients together so their joint L2 norm is <= max_norm."""
    if max_norm is None:
        return dict(grads)
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return dict(grads)
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}


def learning_rate(lr0: float, decay: float, epoch: int) -> float:
    """Exponential decay, applied once per epoch: lr0 * decay**epoch."""
    lr = lr0
    for _ in range(epoch):
        lr *= decay
    return lr
