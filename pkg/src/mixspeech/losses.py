"""CTC, sequence cross-entropy and their weighted combinations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import autodiff as ad

BLANK = 0
NEG_INF = -np.inf


@dataclass
class LossBreakdown:
    ctc: float
    ce: float
    mtl: float
    lam: float | None = None
    per_target: tuple[float, float] | None = None


@dataclass
class CtcResult:
    loss: float
    grad: np.ndarray
    feasible: bool
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None


def extend_labels(labels: Sequence[int]) -> np.ndarray:
    """Interleave blanks: [a, b] -> [blank, a, blank, b, blank]."""
    ext = np.full(2 * len(labels) + 1, BLANK, dtype=np.int64)
    ext[1::2] = labels
    return ext


def min_frames(labels: Sequence[int]) -> int:
    """Shortest input that admits an alignment: L plus one per adjacent repeat."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _lse3(a, b, c):
    m = np.maximum(np.maximum(a, b), c)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = safe + np.log(np.exp(a - safe) + np.exp(b - safe) + np.exp(c - safe))
    return np.where(np.isneginf(m), NEG_INF, out)


def ctc_lattice(logprobs: np.ndarray, labels: Sequence[int]):
    """Forward and backward log-variables over the blank-extended labels.

    Both matrices include the emission at frame t, so
    ``alpha[t, s] + beta[t, s] - logprobs[t, ext[s]]`` sums (in log space)
    over s to the total log-likelihood for every t.
    """
    logprobs = np.asarray(logprobs, dtype=np.float64)
    t_len = logprobs.shape[0]
    ext = extend_labels(labels)
    s_len = ext.size
    emit = logprobs[:, ext]
    # s may skip from s-2 when ext[s] is a label differing from ext[s-2]
    skip = np.zeros(s_len, dtype=bool)
    skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    skip_back = np.zeros(s_len, dtype=bool)
    skip_back[:-2] = skip[2:]

    alpha = np.full((t_len, s_len), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if s_len > 1:
        alpha[0, 1] = emit[0, 1]
    pad = np.full(2, NEG_INF)
    for t in range(1, t_len):
        prev = alpha[t - 1]
        shifted = np.concatenate((pad, prev))
        one = shifted[1 : s_len + 1]
        two = np.where(skip, shifted[:s_len], NEG_INF)
        alpha[t] = _lse3(prev, one, two) + emit[t]

    beta = np.full((t_len, s_len), NEG_INF)
    beta[-1, -1] = emit[-1, -1]
    if s_len > 1:
        beta[-1, -2] = emit[-1, -2]
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1]
        shifted = np.concatenate((nxt, pad))
        one = shifted[1 : s_len + 1]
        two = np.where(skip_back, shifted[2 : s_len + 2], NEG_INF)
        beta[t] = _lse3(nxt, one, two) + emit[t]
    return ext, alpha, beta


def ctc_loss(logprobs: np.ndarray, labels: Sequence[int], keep_lattice: bool = False) -> CtcResult:
    """Negative log-probability of ``labels`` summed over all CTC alignments.

    The gradient is taken with respect to ``logprobs`` treated as free
    variables: ``-occupancy[t, k]``, the posterior of emitting k at frame t.
    Infeasible pairs give an infinite loss with a zero gradient.
    """
    logprobs = np.asarray(logprobs, dtype=np.float64)
    labels = [int(v) for v in labels]
    if BLANK in labels:
        raise ValueError("target sequence must not contain the blank id")
    t_len, vocab = logprobs.shape
    if any(v < 0 or v >= vocab for v in labels):
        raise ValueError("target id out of range")
    if t_len < min_frames(labels):
        return CtcResult(np.inf, np.zeros_like(logprobs), False)

    ext, alpha, beta = ctc_lattice(logprobs, labels)
    total = logsumexp(alpha[-1, -2:]) if ext.size > 1 else alpha[-1, -1]
    # posterior occupancy of each (t, s), merged by symbol
    post = alpha + beta - logprobs[:, ext] - total
    grad = np.zeros_like(logprobs)
    for sym in np.unique(ext):
        cols = post[:, ext == sym]
        grad[:, sym] = -np.exp(logsumexp(cols, axis=1))
    result = CtcResult(float(-total), grad, True)
    if keep_lattice:
        result.alpha, result.beta = alpha, beta
    return result


def ctc_loss_op(logprobs: ad.Tensor, lengths: Sequence[int], targets: Sequence[Sequence[int]]):
    """Per-row CTC on a (N, T, V) log-prob tensor, recorded on the tape.

    Rows whose targets cannot be aligned contribute 0 and are reported in the
    returned feasibility mask.
    """
    n = len(targets)
    losses = np.zeros(n)
    grads = np.zeros(logprobs.shape)
    feasible = np.zeros(n, dtype=bool)
    for i, (t_len, y) in enumerate(zip(lengths, targets)):
        res = ctc_loss(logprobs.data[i, :t_len], y)
        feasible[i] = res.feasible
        if res.feasible:
            losses[i] = res.loss
            grads[i, :t_len] = res.grad

    def back(g):
        return (g[:, None, None] * grads,)

    return ad.custom(losses, (logprobs,), back), feasible


def ce_loss(logits: np.ndarray, targets: Sequence[int]) -> float:
    """Per-token mean of -log softmax(logits_u)[y_u]."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[0] != targets.size:
        raise ValueError(f"{logits.shape[0]} logit rows for {targets.size} targets")
    if np.any(targets < 0) or np.any(targets >= logits.shape[1]):
        raise ValueError("target id out of range")
    logp = logits - logsumexp(logits, axis=1, keepdims=True)
    return float(-logp[np.arange(targets.size), targets].mean())


def ce_loss_op(logits: ad.Tensor, targets: np.ndarray, mask: np.ndarray) -> ad.Tensor:
    """Per-row token-mean CE on (N, U, V) logits; ``mask`` marks real steps."""
    logp = ad.log_softmax(logits)
    picked = ad.pick(logp, targets)
    weights = mask / np.maximum(mask.sum(axis=1, keepdims=True), 1)
    return ad.scale(ad.sum_(ad.mul(picked, weights), axis=1), -1.0)


def mtl_loss(ctc: float, ce: float, beta: float) -> float:
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    return beta * ctc + (1.0 - beta) * ce


def mix_losses(loss_i: float, loss_j: float, lam: float) -> float:
    return lam * loss_i + (1.0 - lam) * loss_j


# --------------------------------------------------------------------------
# Batched training objective
# --------------------------------------------------------------------------


@dataclass
class Target:
    """One recognition target attached to an encoder input row."""

    row: int
    tokens: list[int]
    weight: float


@dataclass
class BatchLoss:
    total: ad.Tensor
    ctc: float
    ce: float
    mtl: float
    ctc_rows: np.ndarray
    ce_rows: np.ndarray
    feasible: np.ndarray


def weighted_mtl(model, inputs, lengths, targets: Sequence[Target], beta: float,
                 rng=None, normalizer: float | None = None) -> BatchLoss:
    """Sum of weight * L_MTL over targets, divided by the number of inputs.

    One encoder pass serves every target that references the same row, so a
    mixed input pays for a single encoder pass and one decoder pass per label.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    enc = model.encode(inputs, lengths, rng=rng)
    rows = np.array([tg.row for tg in targets], dtype=np.int64)
    enc_lengths = enc.lengths[rows]

    ctc_logp = ad.take(ad.log_softmax(enc.ctc_logits), rows, axis=0)
    ctc_rows, feasible = ctc_loss_op(ctc_logp, enc_lengths, [tg.tokens for tg in targets])

    dec_in, dec_out, mask = model.vocab.teacher_forcing([tg.tokens for tg in targets])
    logits = model.decode_train(enc, rows, dec_in, rng=rng)
    ce_rows = ce_loss_op(logits, dec_out, mask)

    weights = np.array([tg.weight for tg in targets], dtype=np.float64)
    if beta > 0.0:
        # CTC cannot align these; with beta == 0 the CE term still applies
        weights = weights * feasible
    mtl_rows = ad.add(ad.scale(ctc_rows, beta), ad.scale(ce_rows, 1.0 - beta))
    denom = normalizer if normalizer is not None else float(len(set(rows.tolist())))
    total = ad.scale(ad.sum_(ad.mul(mtl_rows, weights)), 1.0 / max(denom, 1.0))
    wsum = max(weights.sum(), 1e-300)
    ctc_mean = float((ctc_rows.data * weights).sum() / wsum)
    ce_mean = float((ce_rows.data * weights).sum() / wsum)
    return BatchLoss(
        total=total,
        ctc=ctc_mean,
        ce=ce_mean,
        mtl=float(mtl_loss(ctc_mean, ce_mean, beta)),
        ctc_rows=ctc_rows.data.copy(),
        ce_rows=ce_rows.data.copy(),
        feasible=feasible,
    )


def target_mtl(model, enc, row: int, tokens: Sequence[int], beta: float):
    """L_MTL of one target against encoder row ``row``; returns (ctc, ce, mtl tensor)."""
    rows = np.array([row], dtype=np.int64)
    ctc_logp = ad.take(ad.log_softmax(enc.ctc_logits), rows, axis=0)
    ctc_row, feasible = ctc_loss_op(ctc_logp, enc.lengths[rows], [list(tokens)])
    if not feasible[0]:
        raise ValueError("target is longer than the encoder output admits")
    dec_in, dec_out, mask = model.vocab.teacher_forcing([list(tokens)])
    ce_row = ce_loss_op(model.decode_train(enc, rows, dec_in), dec_out, mask)
    mtl = ad.add(ad.scale(ctc_row, beta), ad.scale(ce_row, 1.0 - beta))
    return float(ctc_row.data[0]), float(ce_row.data[0]), ad.reshape(mtl, ())


def _encode_one(model, x):
    frames = x.frames if hasattr(x, "frames") else np.asarray(x, dtype=np.float64)
    return model.encode(frames[None], np.array([frames.shape[0]]))


def mtl_objective(model, x, y, beta: float) -> tuple[LossBreakdown, ad.Tensor]:
    """L_MTL(x, y) for a single utterance."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    ctc, ce, mtl = target_mtl(model, _encode_one(model, x), 0, y, beta)
    return LossBreakdown(ctc=ctc, ce=ce, mtl=float(mtl.data)), mtl


def mixspeech_loss(model, x_mix, y_i, y_j, lam: float, beta: float) -> tuple[LossBreakdown, ad.Tensor]:
    """lam * L_MTL(x_mix, y_i) + (1 - lam) * L_MTL(x_mix, y_j).

    One encoder pass on ``x_mix`` feeds both decoder passes, so gradients from
    both terms meet in the shared encoder. Returns the breakdown and the
    differentiable total; call inside a tape to backpropagate.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    enc = _encode_one(model, x_mix)
    ctc_i, ce_i, l_i = target_mtl(model, enc, 0, y_i, beta)
    ctc_j, ce_j, l_j = target_mtl(model, enc, 0, y_j, beta)
    total = ad.add(ad.scale(l_i, lam), ad.scale(l_j, 1.0 - lam))
    breakdown = LossBreakdown(
        ctc=mix_losses(ctc_i, ctc_j, lam),
        ce=mix_losses(ce_i, ce_j, lam),
        mtl=float(total.data),
        lam=lam,
        per_target=(float(l_i.data), float(l_j.data)),
    )
    return breakdown, total
