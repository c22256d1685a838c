"""Independent reference computations used by the tests."""

import itertools

import numpy as np


def collapse_ref(path, blank=0):
    """Merge runs with itertools.groupby, then drop blanks."""
    return [k for k, _ in itertools.groupby(path) if k != blank]


def brute_force_ctc(logprobs, labels, blank=0):
    """-log of the summed probability of every path collapsing to ``labels``."""
    t_len, vocab = logprobs.shape
    probs = np.exp(logprobs)
    total = 0.0
    for path in itertools.product(range(vocab), repeat=t_len):
        if collapse_ref(path, blank) == list(labels):
            total += np.prod(probs[np.arange(t_len), path])
    return -np.log(total) if total > 0 else np.inf


def brute_force_prefix(logprobs, prefix, blank=0):
    """log of the total probability of paths whose collapse starts with ``prefix``."""
    t_len, vocab = logprobs.shape
    probs = np.exp(logprobs)
    total = 0.0
    n = len(prefix)
    for path in itertools.product(range(vocab), repeat=t_len):
        if collapse_ref(path, blank)[:n] == list(prefix):
            total += np.prod(probs[np.arange(t_len), path])
    return np.log(total) if total > 0 else -np.inf


def random_logprobs(rng, t_len, vocab, sharp=1.0):
    z = sharp * rng.normal(size=(t_len, vocab))
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def all_label_sequences(vocab, max_len, blank=0):
    symbols = [v for v in range(vocab) if v != blank]
    for n in range(max_len + 1):
        yield from (list(s) for s in itertools.product(symbols, repeat=n))
