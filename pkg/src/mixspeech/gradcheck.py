"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| scaled by the larger gradient magnitude (never below ``floor``)."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), floor)
    return float(np.max(np.abs(a - n)) / scale)


def numeric_grad(loss_fn: Callable[[], float], x: np.ndarray, h: float = 1e-6,
                 coords: Sequence[tuple] | None = None) -> np.ndarray:
    """d loss / d x by central differences, perturbing ``x`` in place.

    With ``coords`` only those entries are probed and a flat array in that
    order is returned.
    """
    picks = list(np.ndindex(x.shape)) if coords is None else list(coords)
    out = np.empty(len(picks))
    for k, idx in enumerate(picks):
        keep = x[idx]
        x[idx] = keep + h
        up = loss_fn()
        x[idx] = keep - h
        down = loss_fn()
        x[idx] = keep
        out[k] = (up - down) / (2.0 * h)
    return out.reshape(x.shape) if coords is None else out


def check_op(fn: Callable[..., ad.Tensor], inputs: Sequence[np.ndarray], h: float = 1e-6,
             seed: int = 0) -> float:
    """Largest relative error over all inputs of ``fn`` projected on a random cotangent."""
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    probe = None

    def forward(track: bool):
        tensors = [ad.Tensor(a, requires_grad=track) for a in arrays]
        return tensors, fn(*tensors)

    with ad.Tape() as tape:
        tensors, out = forward(True)
        probe = np.random.default_rng(seed).normal(size=out.shape)
        loss = ad.sum_(ad.mul(out, ad.Tensor(probe)))
    tape.backward(loss)

    def scalar() -> float:
        _, o = forward(False)
        return float(np.sum(o.data * probe))

    worst = 0.0
    for t, a in zip(tensors, arrays):
        analytic = t.grad if t.grad is not None else np.zeros_like(a)
        worst = max(worst, relative_error(analytic, numeric_grad(scalar, a, h)))
    return worst
