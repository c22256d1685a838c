import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_model
from mixspeech.decode import (CtcPrefixScorer, beam_search_joint, collapse, ctc_prefix_score,
                              greedy_ctc_decode, joint)
from mixspeech.losses import ctc_loss
from mixspeech.metrics import ErrorCounts, corpus_error_rate, edit_distance
from mixspeech.models import greedy_attention_decode
from oracles import brute_force_prefix, collapse_ref, random_logprobs


def one_hot_logprobs(path, vocab):
    lp = np.full((len(path), vocab), -1e4)
    lp[np.arange(len(path)), path] = 0.0
    return lp


# -- greedy CTC --------------------------------------------------------------


def test_collapse_examples():
    a, b, c = 1, 2, 3
    assert collapse([a, a, 0, a]) == [a, a]
    assert collapse([0, 0, 0]) == []
    assert greedy_ctc_decode(one_hot_logprobs([b, 0, b, c], 4)) == [b, b, c]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=30))
def test_greedy_inverts_collapse(path):
    assert greedy_ctc_decode(one_hot_logprobs(path, 5)) == collapse_ref(path)


# -- prefix scores -----------------------------------------------------------


def test_empty_prefix_scores_zero(rng):
    assert ctc_prefix_score(random_logprobs(rng, 5, 3), []) == pytest.approx(0.0, abs=1e-12)


def test_two_by_two_hand_case():
    lp = np.log(np.array([[0.6, 0.4], [0.3, 0.7]]))
    # paths starting with label 1: (1,0) (1,1) (0,1)
    expected = np.log(0.4 * 0.3 + 0.4 * 0.7 + 0.6 * 0.7)
    assert ctc_prefix_score(lp, [1]) == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize("prefix", [[1], [2], [1, 2], [2, 2], [1, 2, 1]])
def test_prefix_matches_enumeration(prefix, rng):
    lp = random_logprobs(rng, 5, 3)
    assert ctc_prefix_score(lp, prefix) == pytest.approx(brute_force_prefix(lp, prefix), abs=1e-10)


@pytest.mark.parametrize("labels", [[1], [1, 1], [2, 1, 2]])
def test_complete_prefix_equals_ctc(labels, rng):
    lp = random_logprobs(rng, 6, 3)
    assert ctc_prefix_score(lp, labels, complete=True) == pytest.approx(
        -ctc_loss(lp, labels).loss, abs=1e-10)


def test_prefix_score_is_non_increasing(rng):
    lp = random_logprobs(rng, 12, 4)
    seq = rng.integers(1, 4, size=6).tolist()
    scores = [ctc_prefix_score(lp, seq[:n]) for n in range(len(seq) + 1)]
    assert all(b <= a + 1e-12 for a, b in zip(scores, scores[1:]))


def test_batched_extension_matches_single(rng):
    lp = random_logprobs(rng, 8, 5)
    scorer = CtcPrefixScorer(lp)
    _, states = scorer.extend(scorer.initial(), [1, 2])
    many, _, _ = scorer.extend_many(states, [1, 2, 3, 4])
    for k, st_ in enumerate(states):
        single, _ = scorer.extend(st_, [1, 2, 3, 4])
        assert np.array_equal(many[k], single)


# -- beam search -------------------------------------------------------------


@pytest.fixture(params=["las_mini", "transformer_mini"])
def encoded(request, rng):
    model = tiny_model(request.param, seed=5)
    x = rng.normal(size=(3, 24, 5))
    return model, model.encode(x, [24, 20, 16])


def test_beam_one_attention_only_is_greedy(encoded):
    model, enc = encoded
    for row in range(3):
        t_len = int(enc.lengths[row])
        hyp = beam_search_joint(model, enc, row, beam=1, decode_beta=0.0)
        assert hyp.tokens == greedy_attention_decode(model, enc, row, t_len)


def test_returned_hypothesis_is_best_and_consistent(encoded):
    model, enc = encoded
    kept = []
    best = beam_search_joint(model, enc, 0, beam=6, decode_beta=0.3, keep_final=kept)
    assert all(best.joint_score >= h.joint_score for h in kept)
    assert abs(best.joint_score - joint(best.ctc_score, best.att_score, 0.3)) < 1e-12
    for h in kept:
        assert abs(h.joint_score - (0.3 * h.ctc_score + 0.7 * h.att_score)) < 1e-12


def test_short_cap_returns_flagged(encoded):
    model, enc = encoded
    hyp = beam_search_joint(model, enc, 0, beam=3, decode_beta=0.3, max_len=1)
    assert hyp.flagged or hyp.finished
    with pytest.raises(ValueError):
        beam_search_joint(model, enc, 0, beam=0)


def test_beam_search_is_deterministic(encoded):
    model, enc = encoded
    a = beam_search_joint(model, enc, 1, beam=5, decode_beta=0.5)
    b = beam_search_joint(model, enc, 1, beam=5, decode_beta=0.5)
    assert a.tokens == b.tokens and a.joint_score == b.joint_score


# -- metrics -----------------------------------------------------------------


def test_edit_distance_examples():
    k, a, t, b = "k", "a", "t", "b"
    assert edit_distance([k, a, t], [k, a, t]) == ErrorCounts(0, 0, 0, 3)
    sub = edit_distance([b, a, t], [k, a, t])
    assert (sub.substitutions, sub.rate) == (1, pytest.approx(1 / 3))
    two = edit_distance(["a", "c"], ["a", "b", "c", "d"])
    assert two.errors == 2 and two.deletions == 2


def test_tie_break_prefers_substitution():
    # "ab" vs "ba" is cost 2 either as two substitutions or an insert/delete pair
    c = edit_distance(["b", "a"], ["a", "b"])
    assert (c.substitutions, c.insertions, c.deletions) == (2, 0, 0)


words = st.lists(st.integers(0, 3), max_size=8)


@settings(max_examples=150, deadline=None)
@given(words, words)
def test_distance_symmetry(x, y):
    a, b = edit_distance(x, y), edit_distance(y, x)
    assert a.errors == b.errors
    assert a.substitutions + a.deletions <= len(y)
    if a.substitutions == b.substitutions:
        assert (a.deletions, a.insertions) == (b.insertions, b.deletions)


@settings(max_examples=150, deadline=None)
@given(words, words, words)
def test_triangle_inequality(x, y, z):
    assert edit_distance(x, z).errors <= edit_distance(x, y).errors + edit_distance(y, z).errors


def test_corpus_rates():
    assert corpus_error_rate([([1, 2], [1, 2])]) == 0.0
    assert corpus_error_rate([([9, 2, 3], [1, 2, 3])]) == pytest.approx(33.333, abs=1e-3)
    pairs = [([1, 2, 3, 9], [1, 2, 3, 4]), ([1, 2, 3], [1, 2, 3, 4, 5, 6])]
    assert corpus_error_rate(pairs) == pytest.approx(40.0, abs=1e-12)
    assert corpus_error_rate([([], [1, 2, 3])]) == 100.0
    with pytest.raises(ValueError):
        corpus_error_rate([])
    with pytest.raises(ZeroDivisionError):
        corpus_error_rate([([1], [])])
