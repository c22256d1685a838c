import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixspeech.augment import (MixWeight, NoisePolicy, SpecAugmentPolicy, add_noise, make_mix_batch,
                               make_tri_batch, mix_inputs, n_mix_anchors, sample_lambda,
                               spec_augment, tri_mix)
from mixspeech.features import FeatureSequence, Waveform


def fs(a):
    return FeatureSequence(np.asarray(a, dtype=float))


def _batch(b, rng, d=3):
    return [(fs(rng.normal(size=(int(rng.integers(2, 7)), d))), [3 + i % 4]) for i in range(b)]


# -- lambda ------------------------------------------------------------------


@pytest.mark.parametrize("alpha", [0.2, 0.5, 2.0])
def test_lambda_symmetric_mean_and_support(alpha):
    rng = np.random.default_rng(0)
    lams = np.array([sample_lambda(alpha, rng).lam for _ in range(100_000)])
    assert abs(lams.mean() - 0.5) < 0.01
    assert np.all((lams > 0) & (lams < 1))


def test_lambda_rejects_bad_alpha(rng):
    with pytest.raises(ValueError):
        sample_lambda(0.0, rng)
    with pytest.raises(ValueError):
        MixWeight(1.0, 0.5)


def test_lambda_redraws_extremes():
    # alpha this small puts almost all mass within 1e-6 of the ends
    rng = np.random.default_rng(3)
    for _ in range(50):
        lam = sample_lambda(0.01, rng).lam
        assert 1e-6 < lam < 1 - 1e-6


# -- input mixing ------------------------------------------------------------


def test_mix_endpoints_and_midpoint():
    x, y = fs([[2.0]]), fs([[4.0]])
    assert np.array_equal(mix_inputs(x, y, 0.5).frames, [[3.0]])
    assert np.array_equal(mix_inputs(x, y, 1.0).frames, [[2.0]])


def test_mix_pads_shorter_input(rng):
    xi, xj = fs(rng.normal(size=(3, 2))), fs(rng.normal(size=(5, 2)))
    out = mix_inputs(xi, xj, 0.25).frames
    assert out.shape == (5, 2)
    assert np.allclose(out[3:], 0.75 * xj.frames[3:], atol=0)
    assert np.allclose(out[:3], 0.25 * xi.frames + 0.75 * xj.frames[:3])


def test_mix_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        mix_inputs(fs([[1.0, 2.0]]), fs([[1.0]]), 0.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.floats(0, 1), st.integers(0, 999))
def test_mix_properties(ti, tj, lam, seed):
    r = np.random.default_rng(seed)
    xi, xj = fs(r.normal(size=(ti, 3))), fs(r.normal(size=(tj, 3)))
    out = mix_inputs(xi, xj, lam).frames
    assert np.allclose(out, mix_inputs(xj, xi, 1 - lam).frames, atol=1e-12)
    assert np.allclose(mix_inputs(xi, xi, lam).frames, xi.frames, atol=1e-12)
    t = max(ti, tj)
    pi, pj = np.zeros((t, 3)), np.zeros((t, 3))
    pi[:ti], pj[:tj] = xi.frames, xj.frames
    lo, hi = np.minimum(pi, pj), np.maximum(pi, pj)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_tri_mix():
    assert np.array_equal(tri_mix(fs([[3.0]]), fs([[6.0]]), fs([[9.0]])).frames, [[6.0]])
    x = fs([[1.0, 2.0], [3.0, 4.0]])
    assert np.allclose(tri_mix(x, x, x).frames, x.frames)


# -- batch pairing -----------------------------------------------------------


def test_anchor_count_rounding():
    assert n_mix_anchors(20, 0.15) == 3
    assert n_mix_anchors(4, 0.15) == 1
    assert n_mix_anchors(2, 0.15) == 0
    assert n_mix_anchors(10, 0.25) == 3  # 2.5 rounds up


def test_tau_zero_is_all_plain(rng):
    mixed, plain = make_mix_batch(_batch(8, rng), 0.0, 0.5, rng)
    assert mixed == [] and plain == list(range(8))


def test_tau_default_count(rng):
    mixed, plain = make_mix_batch(_batch(20, rng), 0.15, 0.5, rng)
    assert len(mixed) == 3 and len(plain) == 17


def test_full_mixing_partners_differ_over_seeds():
    for seed in range(200):
        r = np.random.default_rng(seed)
        mixed, plain = make_mix_batch(_batch(8, r), 1.0, 0.5, r)
        assert len(mixed) == 8 and plain == []
        partners = [m.source_ids[1] for m in mixed]
        assert len(set(partners)) == 8
        assert all(i != j for i, j in (m.source_ids for m in mixed))


def test_mixed_example_contents(rng):
    batch = _batch(6, rng)
    mixed, plain = make_mix_batch(batch, 0.5, 0.5, rng)
    anchors = {m.source_ids[0] for m in mixed}
    assert sorted(anchors | set(plain)) == list(range(6))
    for m in mixed:
        i, j = m.source_ids
        assert m.x_mix.num_frames == max(batch[i][0].num_frames, batch[j][0].num_frames)
        assert m.y_i == batch[i][1] and m.y_j == batch[j][1]
        assert np.array_equal(m.x_mix.frames, mix_inputs(batch[i][0], batch[j][0], m.lam).frames)


def test_mix_batch_errors(rng):
    with pytest.raises(ValueError):
        make_mix_batch(_batch(4, rng), 1.5, 0.5, rng)
    with pytest.raises(ValueError):
        make_mix_batch(_batch(1, rng), 1.0, 0.5, rng)


def test_tri_batch_uses_three_distinct_sources(rng):
    batch = _batch(8, rng)
    mixed, plain = make_tri_batch(batch, 0.5, rng)
    assert len(mixed) == 4 and len(plain) == 4
    for m in mixed:
        assert len(set(m.source_ids)) == 3


def test_mixing_is_reproducible():
    out = []
    for _ in range(2):
        r = np.random.default_rng(42)
        mixed, _ = make_mix_batch(_batch(10, np.random.default_rng(0)), 0.3, 0.5, r)
        out.append([(m.source_ids, m.lam) for m in mixed])
    assert out[0] == out[1]


# -- SpecAugment -------------------------------------------------------------


def test_empty_policy_is_identity(rng):
    x = fs(rng.normal(size=(50, 10)))
    out = spec_augment(x, SpecAugmentPolicy(0, 1, 10, 0, 0.5), rng)
    assert np.array_equal(out.frames, x.frames)


def test_single_frequency_band(rng):
    x = fs(rng.normal(size=(40, 20)))
    pol = SpecAugmentPolicy(5, 1, 0, 0, 0.0)
    for _ in range(200):
        out = spec_augment(x, pol, rng).frames
        changed = np.flatnonzero(np.any(out != x.frames, axis=0))
        assert changed.size <= 5
        if changed.size:
            assert np.all(np.diff(changed) == 1)
            assert np.all(out[:, changed] == x.frames.mean())
        assert out.shape == x.frames.shape


def test_masked_cell_fraction_matches_expectation(rng):
    d, t, f = 80, 30, 5
    x = fs(rng.normal(size=(t, d)))
    pol = SpecAugmentPolicy(f, 1, 0, 0, 0.0)
    frac = np.mean([np.mean(spec_augment(x, pol, rng).frames != x.frames) for _ in range(10_000)])
    expected = f / (2 * d)
    assert abs(frac - expected) < 0.1 * expected


def test_time_masks_respect_upper_bound(rng):
    x = fs(rng.normal(size=(50, 4)))
    pol = SpecAugmentPolicy(0, 0, 40, 1, 0.2, fill="zero")
    for _ in range(200):
        out = spec_augment(x, pol, rng).frames
        rows = np.flatnonzero(np.any(out != x.frames, axis=1))
        assert rows.size <= 10
        if rows.size:
            assert np.all(out[rows] == 0.0)


def test_masks_are_union_of_bands(rng):
    x = fs(rng.normal(size=(60, 12)))
    out = spec_augment(x, SpecAugmentPolicy(4, 2, 8, 2, 0.5), rng).frames
    changed = out != x.frames
    full_cols = np.all(changed, axis=0)
    full_rows = np.all(changed, axis=1)
    assert np.array_equal(changed, full_cols[None, :] | full_rows[:, None])


def test_policy_validation():
    with pytest.raises(ValueError):
        SpecAugmentPolicy(-1)
    with pytest.raises(ValueError):
        SpecAugmentPolicy(time_mask_upper_p=1.5)


# -- noise -------------------------------------------------------------------


def test_noise_power_ratio_5db():
    assert math.isclose(1 / 10 ** 0.5, 1 / 3.1623, rel_tol=1e-4)
    t = np.arange(16000) / 16000
    w = Waveform(0.5 * np.sin(2 * np.pi * 440 * t))
    p_sig = np.mean(w.samples**2)
    snrs = []
    for seed in range(100):
        noisy = add_noise(w, NoisePolicy(5.0), np.random.default_rng(seed)).samples
        snrs.append(10 * np.log10(p_sig / np.mean((noisy - w.samples) ** 2)))
    assert abs(np.mean(snrs) - 5.0) < 0.5
    assert all(abs(s - 5.0) < 0.5 for s in snrs)


def test_noise_vanishes_at_high_snr(rng):
    w = Waveform(0.3 * np.sin(np.arange(4000) / 7.0))
    out = add_noise(w, NoisePolicy(100.0), rng).samples
    assert np.sqrt(np.mean((out - w.samples) ** 2)) < 1e-3


def test_noise_on_silence_fails(rng):
    with pytest.raises(ValueError):
        add_noise(Waveform(np.zeros(100)), NoisePolicy(), rng)
