"""Levenshtein alignment counts and pooled corpus error rates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class ErrorCounts:
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def rate(self) -> float:
        if self.ref_len == 0:
            raise ZeroDivisionError("error rate undefined for an empty reference")
        return self.errors / self.ref_len

    def __add__(self, other: "ErrorCounts") -> "ErrorCounts":
        return ErrorCounts(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.ref_len + other.ref_len,
        )


def edit_distance(hyp: Sequence, ref: Sequence) -> ErrorCounts:
    """Unit-cost alignment of ``hyp`` against ``ref``.

    Among equally short alignments the backtrace prefers a substitution (or
    match), then an insertion, then a deletion.
    """
    hyp, ref = list(hyp), list(ref)
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            d[i, j] = min(d[i - 1, j - 1] + cost, d[i, j - 1] + 1, d[i - 1, j] + 1)
    s = dl = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            if d[i, j] == d[i - 1, j - 1] + cost:
                s += cost
                i, j = i - 1, j - 1
                continue
        if j > 0 and d[i, j] == d[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dl += 1
            i -= 1
    return ErrorCounts(s, dl, ins, n)


def pooled_counts(pairs: Iterable[tuple[Sequence, Sequence]]) -> ErrorCounts:
    total = ErrorCounts(0, 0, 0, 0)
    for hyp, ref in pairs:
        total = total + edit_distance(hyp, ref)
    return total


def corpus_error_rate(pairs: Iterable[tuple[Sequence, Sequence]]) -> float:
    """100 * sum(S + D + I) / sum(ref_len) over all pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one (hyp, ref) pair")
    total = pooled_counts(pairs)
    if total.ref_len == 0:
        raise ZeroDivisionError("total reference length is zero")
    return 100.0 * total.rate
