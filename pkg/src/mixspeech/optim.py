"""Adam with bias correction, plus global-norm gradient clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    skipped: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params, grads: dict[str, np.ndarray], state: AdamState, hyper: AdamHyper) -> bool:
    """Update ``params`` in place. Returns False (and counts a skip) on a non-finite gradient."""
    for name in params:
        if name not in grads:
            raise KeyError(f"no gradient for parameter {name}")
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        state.skipped += 1
        return False
    state.step += 1
    b1, b2 = hyper.beta1, hyper.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - hyper.lr * (m / corr1) / (np.sqrt(v / corr2) + hyper.eps)
    return True


def collect_grads(params) -> dict[str, np.ndarray]:
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()}


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their joint L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * factor
    return norm
