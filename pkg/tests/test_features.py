import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from mixspeech.features import (FeatureConfig, FeatureSequence, MalformedWavError,
                                MultichannelError, UnsupportedEncodingError, Waveform, cmvn,
                                featurize, frame_signal, inverse_mfcc, log_mel_fbank,
                                mel_filterbank, mfcc, num_frames, power_spectrogram,
                                read_features, read_wav, write_features, write_wav)


def _write_pcm(path, samples_int16, rate=16000, channels=1):
    with wave.open(str(path), "wb") as f:
        f.setnchannels(channels)
        f.setsampwidth(2)
        f.setframerate(rate)
        f.writeframes(np.asarray(samples_int16, dtype="<i2").tobytes())


# -- WAV input ---------------------------------------------------------------


def test_read_silence(tmp_path):
    _write_pcm(tmp_path / "z.wav", np.zeros(160))
    w = read_wav(tmp_path / "z.wav")
    assert w.sample_rate_hz == 16000
    assert np.array_equal(w.samples, np.zeros(160))


def test_read_scaling_half(tmp_path):
    _write_pcm(tmp_path / "h.wav", np.full(100, 16384))
    assert np.all(read_wav(tmp_path / "h.wav").samples == 0.5)


def test_read_sine_from_independent_writer(tmp_path):
    t = np.arange(16000) / 16000.0
    pcm = np.round(0.25 * np.sin(2 * np.pi * 1000 * t) * 32768).astype(np.int16)
    wavfile.write(tmp_path / "s.wav", 16000, pcm)
    w = read_wav(tmp_path / "s.wav")
    assert len(w) == 16000
    assert abs(np.max(np.abs(w.samples)) - 0.25) < 1e-3


def test_write_then_read_roundtrip(tmp_path, rng):
    x = np.round(rng.uniform(-0.9, 0.9, 500) * 32768) / 32768
    write_wav(tmp_path / "r.wav", Waveform(x, 8000))
    w = read_wav(tmp_path / "r.wav")
    assert w.sample_rate_hz == 8000
    assert np.allclose(w.samples, x, atol=1 / 32768)


def test_wav_errors_are_distinct(tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"RIFX1234WAVE")
    with pytest.raises(MalformedWavError):
        read_wav(tmp_path / "bad.wav")
    _write_pcm(tmp_path / "st.wav", np.zeros(20), channels=2)
    with pytest.raises(MultichannelError):
        read_wav(tmp_path / "st.wav")
    # 32-bit float WAV (format tag 3)
    data = np.zeros(10, dtype="<f4").tobytes()
    fmt = struct.pack("<HHIIHH", 3, 1, 16000, 64000, 4, 32)
    raw = (b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(data)) + b"WAVE"
           + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data))
           + data)
    (tmp_path / "f.wav").write_bytes(raw)
    with pytest.raises(UnsupportedEncodingError):
        read_wav(tmp_path / "f.wav")


# -- spectra -----------------------------------------------------------------


def test_zero_waveform_gives_zero_spectrogram():
    spec = power_spectrogram(Waveform(np.zeros(1600)), FeatureConfig())
    assert spec.shape[1] == 257
    assert np.all(spec == 0.0)


def test_bin_centre_tone_peaks_at_its_bin():
    cfg = FeatureConfig()
    k = 40
    t = np.arange(4000)
    w = Waveform(0.5 * np.sin(2 * np.pi * k * t / cfg.n_fft))
    spec = power_spectrogram(w, cfg)
    assert np.all(np.argmax(spec, axis=1) == k)
    # one frame against a direct DFT sum
    frame = frame_signal(w, cfg)[3] * (0.5 - 0.5 * np.cos(2 * np.pi * np.arange(400) / 400))
    n = np.arange(400)
    dft = np.array([np.sum(frame * np.exp(-2j * np.pi * b * n / cfg.n_fft)) for b in range(257)])
    assert np.allclose(spec[3], np.abs(dft) ** 2, rtol=1e-10, atol=1e-9)


def test_parseval_one_sided(rng):
    # full-spectrum Parseval folded onto the one-sided bins: interior bins count twice
    cfg = FeatureConfig(window="rectangular")
    w = Waveform(rng.uniform(-1, 1, 400))
    spec = power_spectrogram(w, cfg)[0]
    weights = np.full(spec.size, 2.0)
    weights[0] = weights[-1] = 1.0
    assert abs(np.sum(weights * spec) - cfg.n_fft * np.sum(w.samples**2)) < 1e-9 * cfg.n_fft * 400


def test_frame_count_formula():
    cfg = FeatureConfig()
    for n in [400, 401, 559, 560, 561, 16000, 12345]:
        assert num_frames(n, cfg) == (n - 400) // 160 + 1
    with pytest.raises(ValueError):
        frame_signal(Waveform(np.zeros(399)), cfg)


@pytest.mark.parametrize("n_mels", [23, 80])
def test_fbank_dimension(n_mels):
    cfg = FeatureConfig(n_mels=n_mels)
    fb = log_mel_fbank(np.ones((3, 257)), cfg)
    assert fb.frames.shape == (3, n_mels)


def test_fbank_floor_on_silence():
    cfg = FeatureConfig()
    fb = log_mel_fbank(np.zeros((2, 257)), cfg)
    assert np.all(fb.frames == np.log(1e-10))


def test_fbank_shifts_by_log_c(rng):
    cfg = FeatureConfig()
    spec = rng.uniform(0.1, 2.0, (4, 257))
    a = log_mel_fbank(spec, cfg).frames
    b = log_mel_fbank(3.0 * spec, cfg).frames
    assert np.allclose(b - a, np.log(3.0), atol=1e-12)


def test_filterbank_infeasible():
    with pytest.raises(ValueError):
        mel_filterbank(FeatureConfig(n_fft=64, frame_length_ms=4.0, frame_shift_ms=2.0, n_mels=33,
                                     n_mfcc=13))


def test_mel_filters_are_triangles_within_nyquist():
    fb = mel_filterbank(FeatureConfig())
    assert fb.shape == (257, 23)
    assert np.all(fb >= 0) and np.all(fb <= 1.0 + 1e-12)
    peaks = np.argmax(fb, axis=0)
    assert np.all(np.diff(peaks) > 0)


# -- cepstra -----------------------------------------------------------------


def _dct_matrix(d):
    n = np.arange(d)
    m = np.cos(np.pi * (n[None, :] + 0.5) * n[:, None] / d)
    m[0] *= np.sqrt(1.0 / d)
    m[1:] *= np.sqrt(2.0 / d)
    return m


def test_mfcc_constant_frame():
    fb = FeatureSequence(np.full((2, 23), 1.7))
    c = mfcc(fb).frames
    assert np.allclose(c[:, 0], 1.7 * np.sqrt(23), atol=1e-9)
    assert np.allclose(c[:, 1:], 0.0, atol=1e-9)


def test_mfcc_impulse_matches_explicit_matrix():
    frame = np.zeros((1, 23))
    frame[0, 0] = 1.0
    c = mfcc(FeatureSequence(frame)).frames[0]
    assert np.allclose(c, _dct_matrix(23)[:, 0], atol=1e-12)


def test_mfcc_shape_and_inverse(rng):
    x = FeatureSequence(rng.normal(size=(7, 23)))
    assert mfcc(x, 13).frames.shape == (7, 13)
    assert np.allclose(inverse_mfcc(mfcc(x)).frames, x.frames, atol=1e-9)
    with pytest.raises(ValueError):
        mfcc(x, 24)


# -- normalisation -----------------------------------------------------------


def test_cmvn_hand_case():
    out = cmvn(FeatureSequence(np.array([[1.0, 5.0], [3.0, 5.0]]))).frames
    assert np.array_equal(out[:, 0], [-1.0, 1.0])
    assert np.array_equal(out[:, 1], [0.0, 0.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(1, 6), st.integers(0, 10_000))
def test_cmvn_zero_mean_and_idempotent(t, d, seed):
    x = np.random.default_rng(seed).normal(3.0, 2.0, (t, d))
    once = cmvn(FeatureSequence(x)).frames
    assert np.all(np.abs(once.mean(axis=0)) < 1e-9)
    assert np.allclose(cmvn(FeatureSequence(once)).frames, once, atol=1e-6)


# -- pipeline ----------------------------------------------------------------


def test_featurize_is_deterministic(rng):
    w = Waveform(rng.uniform(-0.3, 0.3, 3200))
    for kind in ("log_fbank", "mfcc"):
        cfg = FeatureConfig(kind=kind)
        a, b = featurize(w, cfg), featurize(w, cfg)
        assert np.array_equal(a.frames, b.frames)
        assert a.dim == cfg.dim and a.feature_kind == kind


def test_feature_dump_roundtrip(tmp_path, rng):
    fs = FeatureSequence(rng.normal(size=(4, 3)), feature_kind="mfcc")
    write_features(tmp_path / "a.feat", fs)
    assert (tmp_path / "a.feat").read_text().startswith("MSFEAT1 4 3 mfcc\n")
    back = read_features(tmp_path / "a.feat")
    assert np.array_equal(back.frames, fs.frames) and back.feature_kind == "mfcc"


def test_config_invariants():
    with pytest.raises(ValueError):
        FeatureConfig(frame_shift_ms=30.0)
    with pytest.raises(ValueError):
        FeatureConfig(n_mfcc=30)
    with pytest.raises(ValueError):
        FeatureConfig(log_floor=0.0)
