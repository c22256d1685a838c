"""Input-side augmentations: pairwise mixing, tri-mixing, masking and noise.

Every function takes an explicit ``numpy.random.Generator``; nothing here
touches global random state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .features import FeatureSequence, Waveform

LAMBDA_EPS = 1e-6
DEFAULT_ALPHA = 0.5
DEFAULT_TAU = 0.15


@dataclass(frozen=True)
class MixWeight:
    lam: float
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"mix weight must lie in (0, 1), got {self.lam}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class MixedExample:
    x_mix: FeatureSequence
    y_i: list[int]
    y_j: list[int]
    lam: float
    source_ids: tuple[int, int]


@dataclass(frozen=True)
class TriMixedExample:
    x_mix: FeatureSequence
    targets: tuple[list[int], list[int], list[int]]
    source_ids: tuple[int, int, int]


@dataclass(frozen=True)
class SpecAugmentPolicy:
    freq_mask_width_F: int = 15
    n_freq_masks_mF: int = 2
    time_mask_width_T: int = 40
    n_time_masks_mT: int = 2
    time_mask_upper_p: float = 0.2
    fill: str = "per_utterance_mean"

    def __post_init__(self):
        counts = (self.freq_mask_width_F, self.n_freq_masks_mF, self.time_mask_width_T,
                  self.n_time_masks_mT)
        if any(v < 0 for v in counts):
            raise ValueError("mask widths and counts must be non-negative")
        if not 0.0 <= self.time_mask_upper_p <= 1.0:
            raise ValueError("time mask upper bound p must lie in [0, 1]")
        if self.fill not in ("zero", "per_utterance_mean"):
            raise ValueError(f"unknown fill {self.fill!r}")


@dataclass(frozen=True)
class NoisePolicy:
    snr_db: float = 5.0

    def __post_init__(self):
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")


def sample_lambda(alpha: float, rng: np.random.Generator) -> MixWeight:
    """Draw lambda ~ Beta(alpha, alpha), redrawing values too close to 0 or 1."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    while True:
        lam = float(rng.beta(alpha, alpha))
        if LAMBDA_EPS < lam < 1.0 - LAMBDA_EPS:
            return MixWeight(lam, alpha)


def _pad_to(frames: np.ndarray, t: int) -> np.ndarray:
    if frames.shape[0] == t:
        return frames
    out = np.zeros((t, frames.shape[1]))
    out[: frames.shape[0]] = frames
    return out


def _check_compatible(xs: Sequence[FeatureSequence]) -> None:
    dims = {x.dim for x in xs}
    kinds = {x.feature_kind for x in xs}
    if len(dims) != 1:
        raise ValueError(f"feature dimensions differ: {sorted(dims)}")
    if len(kinds) != 1:
        raise ValueError(f"feature kinds differ: {sorted(kinds)}")


def mix_inputs(x_i: FeatureSequence, x_j: FeatureSequence, lam: float) -> FeatureSequence:
    """Frame-wise lam * x_i + (1 - lam) * x_j, zero-padding the shorter input."""
    _check_compatible((x_i, x_j))
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    t = max(x_i.num_frames, x_j.num_frames)
    mixed = lam * _pad_to(x_i.frames, t) + (1.0 - lam) * _pad_to(x_j.frames, t)
    return x_i.with_frames(mixed)


def tri_mix(x1: FeatureSequence, x2: FeatureSequence, x3: FeatureSequence) -> FeatureSequence:
    _check_compatible((x1, x2, x3))
    t = max(x1.num_frames, x2.num_frames, x3.num_frames)
    total = _pad_to(x1.frames, t) + _pad_to(x2.frames, t) + _pad_to(x3.frames, t)
    return x1.with_frames(total / 3.0)


def n_mix_anchors(batch_size: int, tau: float) -> int:
    """round(tau * B) with halves rounded up."""
    return int(math.floor(tau * batch_size + 0.5))


def _draw_partners(anchors: np.ndarray, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Distinct partners with partner[k] != anchors[k], by rejection over permutations."""
    while True:
        partners = rng.permutation(batch_size)[: anchors.size]
        if not np.any(partners == anchors):
            return partners


def make_mix_batch(batch: Sequence[tuple[FeatureSequence, list[int]]], tau: float, alpha: float,
                   rng: np.random.Generator):
    """Turn round(tau * B) anchors into mixed examples; the rest pass through.

    Returns ``(mixed, plain)`` where ``plain`` holds the indices of unmixed
    examples. Partners are not removed from the batch: a partner also trains
    as its own plain (or anchor) example.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    b = len(batch)
    k = n_mix_anchors(b, tau)
    if k == 0:
        return [], list(range(b))
    if b < 2:
        raise ValueError("mixing needs at least two examples in the batch")
    anchors = np.sort(rng.choice(b, size=k, replace=False))
    partners = _draw_partners(anchors, b, rng)
    mixed = []
    for i, j in zip(anchors.tolist(), partners.tolist()):
        lam = sample_lambda(alpha, rng).lam
        x_mix = mix_inputs(batch[i][0], batch[j][0], lam)
        mixed.append(MixedExample(x_mix, list(batch[i][1]), list(batch[j][1]), lam, (i, j)))
    anchor_set = set(anchors.tolist())
    return mixed, [i for i in range(b) if i not in anchor_set]


def make_tri_batch(batch: Sequence[tuple[FeatureSequence, list[int]]], tau: float,
                   rng: np.random.Generator):
    """Like ``make_mix_batch`` but each anchor joins two distinct partners at weight 1/3."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    b = len(batch)
    k = n_mix_anchors(b, tau)
    if k == 0:
        return [], list(range(b))
    if b < 3:
        raise ValueError("tri-mixing needs at least three examples in the batch")
    anchors = np.sort(rng.choice(b, size=k, replace=False))
    mixed = []
    for i in anchors.tolist():
        others = np.array([j for j in range(b) if j != i])
        j, l = rng.choice(others, size=2, replace=False).tolist()
        x = tri_mix(batch[i][0], batch[j][0], batch[l][0])
        mixed.append(TriMixedExample(x, (list(batch[i][1]), list(batch[j][1]),
                                         list(batch[l][1])), (i, j, l)))
    anchor_set = set(anchors.tolist())
    return mixed, [i for i in range(b) if i not in anchor_set]


def spec_augment(x: FeatureSequence, policy: SpecAugmentPolicy,
                 rng: np.random.Generator) -> FeatureSequence:
    """Frequency-band and time-band masking on a T x D feature matrix."""
    frames = x.frames.copy()
    t_len, d = frames.shape
    fill = 0.0 if policy.fill == "zero" else float(x.frames.mean())
    for _ in range(policy.n_freq_masks_mF):
        f = int(rng.integers(0, policy.freq_mask_width_F + 1))
        f = min(f, d)
        f0 = int(rng.integers(0, d - f + 1))
        frames[:, f0 : f0 + f] = fill
    t_cap = min(policy.time_mask_width_T, int(math.floor(policy.time_mask_upper_p * t_len)))
    for _ in range(policy.n_time_masks_mT):
        w = int(rng.integers(0, t_cap + 1))
        t0 = int(rng.integers(0, t_len - w + 1))
        frames[t0 : t0 + w, :] = fill
    return x.with_frames(frames)


def add_noise(w: Waveform, policy: NoisePolicy, rng: np.random.Generator) -> Waveform:
    """Additive white Gaussian noise at the policy SNR, clipped to [-1, 1]."""
    power = float(np.mean(w.samples**2))
    if power <= 0.0:
        raise ValueError("cannot set an SNR on a silent waveform")
    noise_var = power / 10.0 ** (policy.snr_db / 10.0)
    noisy = w.samples + rng.normal(0.0, math.sqrt(noise_var), size=w.samples.shape)
    return Waveform(np.clip(noisy, -1.0, 1.0), w.sample_rate_hz)
