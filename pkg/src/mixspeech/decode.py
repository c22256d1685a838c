"""Greedy CTC decoding, CTC prefix scoring and joint CTC-attention beam search."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .losses import BLANK
from .models import NEVER_EMITTED, Encoded, Seq2Seq
from .vocab import EOS, SOS

NEG_INF = -np.inf


def collapse(path: Sequence[int]) -> list[int]:
    """Merge adjacent repeats, then drop blanks."""
    out: list[int] = []
    prev = None
    for p in path:
        p = int(p)
        if p != prev and p != BLANK:
            out.append(p)
        prev = p
    return out


def greedy_ctc_decode(logprobs: np.ndarray) -> list[int]:
    return collapse(np.argmax(np.asarray(logprobs), axis=1))


def joint(ctc: float, att: float, decode_beta: float) -> float:
    if decode_beta == 0.0:
        return att
    if decode_beta == 1.0:
        return ctc
    return decode_beta * ctc + (1.0 - decode_beta) * att


# --------------------------------------------------------------------------
# CTC prefix scores
# --------------------------------------------------------------------------


@dataclass
class PrefixState:
    """Log-probabilities of the prefix at every frame, split by final symbol."""

    r_nonblank: np.ndarray  # (T,)
    r_blank: np.ndarray  # (T,)
    last: int | None

    def full_score(self) -> float:
        """Log-probability that the whole input collapses to exactly this prefix."""
        return float(np.logaddexp(self.r_nonblank[-1], self.r_blank[-1]))


class CtcPrefixScorer:
    def __init__(self, logprobs: np.ndarray):
        self.logprobs = np.asarray(logprobs, dtype=np.float64)

    def initial(self) -> PrefixState:
        t_len = self.logprobs.shape[0]
        return PrefixState(np.full(t_len, NEG_INF), np.cumsum(self.logprobs[:, BLANK]), None)

    def extend_many(self, states: Sequence[PrefixState], tokens: Sequence[int]):
        """Score ``prefix + c`` for every state and every c in ``tokens``.

        Returns prefix log-probabilities of shape (n_states, n_tokens) and the
        per-frame variables (r_nonblank, r_blank), each (T, n_states, n_tokens).
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        y = self.logprobs[:, tokens][:, None, :]  # (T, 1, C)
        blank = self.logprobs[:, BLANK][:, None, None]
        t_len = self.logprobs.shape[0]
        r_b_old = np.stack([st.r_blank for st in states], axis=1)[:, :, None]
        r_n_old = np.stack([st.r_nonblank for st in states], axis=1)[:, :, None]
        last = np.array([-1 if st.last is None else st.last for st in states])
        # a repeat of the last symbol needs an intervening blank
        repeat = (tokens[None, :] == last[:, None])[None]
        phi = np.where(repeat, r_b_old, np.logaddexp(r_b_old, r_n_old))  # (T, n, C)
        shape = (t_len, len(states), tokens.size)
        r_n = np.full(shape, NEG_INF)
        r_b = np.full(shape, NEG_INF)
        empty = (last == -1)[:, None]
        r_n[0] = np.where(empty, y[0], NEG_INF)
        for t in range(1, t_len):
            r_n[t] = np.logaddexp(r_n[t - 1], phi[t - 1]) + y[t]
            r_b[t] = np.logaddexp(r_b[t - 1], r_n[t - 1]) + blank[t]
        starts = np.concatenate([r_n[:1], phi[:-1] + y[1:]], axis=0)
        return logsumexp(starts, axis=0), r_n, r_b

    def extend(self, state: PrefixState, tokens: Sequence[int]):
        scores, r_n, r_b = self.extend_many([state], tokens)
        states = [PrefixState(r_n[:, 0, k], r_b[:, 0, k], int(c)) for k, c in enumerate(tokens)]
        return scores[0], states


def ctc_prefix_score(logprobs: np.ndarray, prefix: Sequence[int], complete: bool = False) -> float:
    """log P(collapse starts with ``prefix``); with ``complete`` the collapse must equal it."""
    scorer = CtcPrefixScorer(logprobs)
    state = scorer.initial()
    score = 0.0
    for c in prefix:
        scores, states = scorer.extend(state, [c])
        score, state = float(scores[0]), states[0]
    if complete:
        return state.full_score()
    return score


# --------------------------------------------------------------------------
# Beam search
# --------------------------------------------------------------------------


@dataclass
class Hypothesis:
    tokens: list[int]
    att_score: float
    ctc_score: float
    joint_score: float
    finished: bool = False
    flagged: bool = False
    ctc_state: PrefixState | None = field(default=None, repr=False)


def _rank_key(h: Hypothesis):
    return (-h.joint_score, h.tokens)


def beam_search_joint(model: Seq2Seq, enc: Encoded, row: int = 0, beam: int = 20,
                      decode_beta: float = 0.3, max_len: int | None = None,
                      keep_final: list | None = None) -> Hypothesis:
    """Label-synchronous beam search scoring decode_beta * CTC + (1 - decode_beta) * attention.

    Returns the best finished hypothesis; if none ends within ``max_len``
    (default T') the best unfinished one is returned with ``flagged`` set.
    When ``keep_final`` is a list it receives every finished hypothesis kept.
    """
    if beam < 1:
        raise ValueError("beam must be at least 1")
    t_len = int(enc.lengths[row])
    max_len = t_len if max_len is None else max_len
    logp_ctc = np.asarray(enc.ctc_logits.data[row, :t_len])
    logp_ctc = logp_ctc - logsumexp(logp_ctc, axis=1, keepdims=True)
    scorer = CtcPrefixScorer(logp_ctc)
    vocab = logp_ctc.shape[1]
    emit = np.array([c for c in range(vocab) if c not in NEVER_EMITTED and c != EOS])

    live = [Hypothesis([], 0.0, 0.0, 0.0, ctc_state=scorer.initial())]
    dec_state = model.init_state(enc, row, 1)
    last_tokens = [SOS]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        att_logp, dec_state = model.step(dec_state, last_tokens)
        candidates: list[tuple[Hypothesis, int]] = []
        scores, r_n, r_b = scorer.extend_many([h.ctc_state for h in live], emit)
        for k, hyp in enumerate(live):
            for ci, c in enumerate(emit.tolist()):
                att = hyp.att_score + float(att_logp[k, c])
                ctc = float(scores[k, ci])
                st = PrefixState(r_n[:, k, ci], r_b[:, k, ci], c)
                candidates.append((Hypothesis(hyp.tokens + [c], att, ctc,
                                              joint(ctc, att, decode_beta), ctc_state=st), k))
            att = hyp.att_score + float(att_logp[k, EOS])
            ctc = hyp.ctc_state.full_score()
            candidates.append((Hypothesis(list(hyp.tokens), att, ctc,
                                          joint(ctc, att, decode_beta), finished=True), k))
        candidates.sort(key=lambda hk: _rank_key(hk[0]))
        kept = candidates[:beam]
        finished.extend(h for h, _ in kept if h.finished)
        survivors = [(h, k) for h, k in kept if not h.finished]
        if not survivors:
            live = []
            break
        live = [h for h, _ in survivors]
        dec_state = model.select(dec_state, [k for _, k in survivors])
        last_tokens = [h.tokens[-1] for h in live]
        # scores only fall as a prefix grows, so no live hypothesis can still win
        if finished and max(f.joint_score for f in finished) >= live[0].joint_score:
            break
    if keep_final is not None:
        keep_final.extend(finished)
    if finished:
        best = min(finished, key=_rank_key)
    else:
        best = min(live, key=_rank_key)
        best.flagged = True
    best.ctc_state = None
    return best
