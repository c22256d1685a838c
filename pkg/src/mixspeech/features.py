"""Audio I/O and the log-mel / MFCC front end."""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct, idct

LOG_FBANK = "log_fbank"
MFCC = "mfcc"
FEATURE_KINDS = (LOG_FBANK, MFCC)
WINDOWS = ("hann", "hamming", "rectangular")
CMVN_VAR_FLOOR = 1e-8


class WavError(ValueError):
    """Base class for WAV decoding failures."""


class MalformedWavError(WavError):
    pass


class UnsupportedEncodingError(WavError):
    pass


class MultichannelError(WavError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-D sample array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class FeatureSequence:
    frames: np.ndarray
    frame_shift_ms: float = 10.0
    feature_kind: str = LOG_FBANK

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValueError(f"feature matrix must be T x D with T, D >= 1, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("feature matrix contains non-finite entries")
        if self.frame_shift_ms <= 0:
            raise ValueError("frame shift must be positive")
        if self.feature_kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.feature_kind!r}")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def with_frames(self, frames: np.ndarray) -> "FeatureSequence":
        return FeatureSequence(frames, self.frame_shift_ms, self.feature_kind)


@dataclass(frozen=True)
class FeatureConfig:
    n_fft: int = 512
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    n_mels: int = 23
    n_mfcc: int = 13
    log_floor: float = 1e-10
    window: str = "hann"
    kind: str = LOG_FBANK
    sample_rate_hz: int = 16000
    cmvn: bool = True

    def __post_init__(self):
        if self.frame_shift_ms <= 0 or self.frame_length_ms <= 0:
            raise ValueError("frame length and shift must be positive")
        if self.frame_shift_ms > self.frame_length_ms:
            raise ValueError("frame shift must not exceed frame length")
        if self.n_mels < 1 or self.n_mels > self.n_fft // 2 + 1:
            raise ValueError(f"n_mels={self.n_mels} must lie in [1, n_fft/2+1]")
        if self.n_mfcc < 1 or self.n_mfcc > self.n_mels:
            raise ValueError(f"n_mfcc={self.n_mfcc} must lie in [1, n_mels]")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")
        if self.window not in WINDOWS:
            raise ValueError(f"unknown window {self.window!r}")
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.frame_samples > self.n_fft:
            raise ValueError(
                f"frame of {self.frame_samples} samples does not fit n_fft={self.n_fft}"
            )

    @property
    def frame_samples(self) -> int:
        return int(round(self.frame_length_ms * self.sample_rate_hz / 1000.0))

    @property
    def shift_samples(self) -> int:
        return int(round(self.frame_shift_ms * self.sample_rate_hz / 1000.0))

    @property
    def dim(self) -> int:
        return self.n_mels if self.kind == LOG_FBANK else self.n_mfcc


# --------------------------------------------------------------------------
# WAV I/O
# --------------------------------------------------------------------------


def read_wav(path) -> Waveform:
    """Read a mono 16-bit PCM RIFF file, scaling samples by 1/32768."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: missing RIFF/WAVE header")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4 : pos + 8])
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise MalformedWavError(f"{path}: chunk {chunk_id!r} truncated")
        if chunk_id == b"fmt ":
            if size < 16:
                raise MalformedWavError(f"{path}: fmt chunk too short")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif chunk_id == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise MalformedWavError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if audio_format != 1 or bits != 16:
        raise UnsupportedEncodingError(
            f"{path}: only 16-bit PCM is supported (format={audio_format}, bits={bits})"
        )
    if channels != 1:
        raise MultichannelError(f"{path}: expected mono, found {channels} channels")
    if len(data) % 2:
        raise MalformedWavError(f"{path}: odd data length {len(data)}")
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate_hz)
        fh.writeframes(pcm.tobytes())


# --------------------------------------------------------------------------
# Front end
# --------------------------------------------------------------------------


def num_frames(n_samples: int, cfg: FeatureConfig) -> int:
    if n_samples < cfg.frame_samples:
        return 0
    return (n_samples - cfg.frame_samples) // cfg.shift_samples + 1


def _window(cfg: FeatureConfig) -> np.ndarray:
    n = cfg.frame_samples
    if cfg.window == "rectangular":
        return np.ones(n)
    # periodic windows, the usual choice for spectral analysis
    phase = 2.0 * np.pi * np.arange(n) / n
    if cfg.window == "hann":
        return 0.5 - 0.5 * np.cos(phase)
    return 0.54 - 0.46 * np.cos(phase)


def frame_signal(w: Waveform, cfg: FeatureConfig) -> np.ndarray:
    """Slice the waveform into overlapping T x frame_samples frames."""
    t = num_frames(len(w), cfg)
    if t < 1:
        raise ValueError(
            f"waveform of {len(w)} samples is shorter than one frame ({cfg.frame_samples})"
        )
    idx = np.arange(t)[:, None] * cfg.shift_samples + np.arange(cfg.frame_samples)[None, :]
    return w.samples[idx]


def power_spectrogram(w: Waveform, cfg: FeatureConfig) -> np.ndarray:
    """T x (n_fft/2+1) squared DFT magnitudes of windowed, zero-padded frames."""
    frames = frame_signal(w, cfg) * _window(cfg)
    spec = np.fft.rfft(frames, n=cfg.n_fft, axis=1)
    return spec.real**2 + spec.imag**2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """(n_fft/2+1) x n_mels triangular filters spanning 0 Hz to Nyquist."""
    n_bins = cfg.n_fft // 2 + 1
    nyquist = cfg.sample_rate_hz / 2.0
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(nyquist), cfg.n_mels + 2))
    freqs = np.linspace(0.0, nyquist, n_bins)
    lo, mid, hi = edges[:-2], edges[1:-1], edges[2:]
    rising = (freqs[:, None] - lo) / (mid - lo)
    falling = (hi - freqs[:, None]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=0) == 0.0)
    if empty.size:
        raise ValueError(
            f"n_mels={cfg.n_mels} too large for n_fft={cfg.n_fft}: "
            f"filters {empty.tolist()} cover no FFT bin"
        )
    return fb


def log_mel_fbank(spec: np.ndarray, cfg: FeatureConfig) -> FeatureSequence:
    spec = np.asarray(spec, dtype=np.float64)
    if spec.ndim != 2 or spec.shape[1] != cfg.n_fft // 2 + 1:
        raise ValueError(f"expected {cfg.n_fft // 2 + 1} spectral columns, got {spec.shape}")
    energies = spec @ mel_filterbank(cfg)
    return FeatureSequence(
        np.log(np.maximum(energies, cfg.log_floor)), cfg.frame_shift_ms, LOG_FBANK
    )


def mfcc(fb: FeatureSequence, n_mfcc: int | None = None) -> FeatureSequence:
    """Orthonormal DCT-II of each log-fbank frame, truncated to n_mfcc."""
    if fb.feature_kind != LOG_FBANK:
        raise ValueError("mfcc expects log_fbank input")
    n_mfcc = fb.dim if n_mfcc is None else n_mfcc
    if n_mfcc > fb.dim:
        raise ValueError(f"n_mfcc={n_mfcc} exceeds input dimension {fb.dim}")
    coeffs = dct(fb.frames, type=2, norm="ortho", axis=1)[:, :n_mfcc]
    return FeatureSequence(coeffs, fb.frame_shift_ms, MFCC)


def inverse_mfcc(cep: FeatureSequence) -> FeatureSequence:
    """Invert a full-length (n_mfcc == n_mels) MFCC back to log-fbank."""
    frames = idct(cep.frames, type=2, norm="ortho", axis=1)
    return FeatureSequence(frames, cep.frame_shift_ms, LOG_FBANK)


def cmvn(fs: FeatureSequence) -> FeatureSequence:
    """Per-utterance mean/variance normalisation (population variance)."""
    x = fs.frames
    mean = x.mean(axis=0)
    var = np.maximum(x.var(axis=0), CMVN_VAR_FLOOR)
    return fs.with_frames((x - mean) / np.sqrt(var))


def featurize(w: Waveform, cfg: FeatureConfig) -> FeatureSequence:
    if w.sample_rate_hz != cfg.sample_rate_hz:
        raise ValueError(
            f"waveform rate {w.sample_rate_hz} Hz does not match config {cfg.sample_rate_hz} Hz"
        )
    feats = log_mel_fbank(power_spectrogram(w, cfg), cfg)
    if cfg.kind == MFCC:
        feats = mfcc(feats, cfg.n_mfcc)
    if cfg.cmvn and feats.num_frames >= 2:
        feats = cmvn(feats)
    return feats


# --------------------------------------------------------------------------
# Feature dump format
# --------------------------------------------------------------------------

FEAT_MAGIC = "MSFEAT1"


def write_features(path, fs: FeatureSequence) -> None:
    t, d = fs.frames.shape
    lines = [f"{FEAT_MAGIC} {t} {d} {fs.feature_kind}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in fs.frames)
    Path(path).write_text("\n".join(lines) + "\n")


def read_features(path, frame_shift_ms: float = 10.0) -> FeatureSequence:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty feature file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != FEAT_MAGIC:
        raise ValueError(f"{path}: bad header {lines[0]!r}")
    t, d, kind = int(head[1]), int(head[2]), head[3]
    rows = [np.array(line.split(), dtype=np.float64) for line in lines[1 : 1 + t]]
    if len(rows) != t or any(r.size != d for r in rows):
        raise ValueError(f"{path}: body does not match header {t}x{d}")
    return FeatureSequence(np.vstack(rows), frame_shift_ms, kind)
