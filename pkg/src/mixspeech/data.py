"""Manifests and a synthetic tone-chirp corpus standing in for licensed speech data."""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import Waveform, write_wav

SAMPLE_RATE = 16000
SIGNATURE_MS = 120.0
DURATION_JITTER = 0.2
BACKGROUND_SNR_DB = 25.0
MAX_SYMBOLS = 20
SPLITS = (("train", 0.8), ("dev", 0.1), ("test", 0.1))


@dataclass(frozen=True)
class UtteranceRef:
    id: str
    wav_path: Path
    text: str


def read_manifest(path) -> list[UtteranceRef]:
    """Parse ``id<TAB>wav_path<TAB>text`` lines; relative paths resolve against the manifest."""
    path = Path(path)
    refs = []
    seen = set()
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
        uid, wav, text = parts
        if uid in seen:
            raise ValueError(f"{path}:{lineno}: duplicate utterance id {uid!r}")
        seen.add(uid)
        wav_path = Path(wav)
        if not wav_path.is_absolute():
            wav_path = path.parent / wav_path
        refs.append(UtteranceRef(uid, wav_path, text))
    return refs


def write_manifest(path, refs: list[UtteranceRef]) -> None:
    path = Path(path)
    lines = []
    for r in refs:
        try:
            wav = r.wav_path.relative_to(path.parent)
        except ValueError:
            wav = r.wav_path
        lines.append(f"{r.id}\t{wav}\t{r.text}")
    path.write_text("\n".join(lines) + "\n")


def symbol_names(vocab_size: int) -> list[str]:
    return list(string.ascii_lowercase[:vocab_size])


def base_frequency(k: int) -> float:
    return 300.0 + 250.0 * k


def signature(k: int, duration_s: float, amplitude: float, rate: int = SAMPLE_RATE) -> np.ndarray:
    """Steady tone for the first half, then an upward chirp, with short fades."""
    n = max(int(round(duration_s * rate)), 8)
    half = n // 2
    f0 = base_frequency(k)
    freq = np.empty(n)
    freq[:half] = f0
    freq[half:] = np.linspace(f0, 1.3 * f0, n - half)
    phase = 2.0 * np.pi * np.cumsum(freq) / rate
    # a second partial keeps neighbouring symbols apart in the mel domain
    wave = np.sin(phase) + 0.4 * np.sin(2.0 * phase)
    fade = min(int(0.005 * rate), n // 4)
    env = np.ones(n)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
    env[:fade], env[n - fade :] = ramp, ramp[::-1]
    return amplitude * wave * env / 1.4


def synth_utterance(tokens: list[int], rng: np.random.Generator, rate: int = SAMPLE_RATE) -> Waveform:
    pieces = [np.zeros(int(rng.integers(int(0.03 * rate), int(0.08 * rate))))]
    for k in tokens:
        dur = SIGNATURE_MS / 1000.0 * (1.0 + rng.uniform(-DURATION_JITTER, DURATION_JITTER))
        pieces.append(signature(k, dur, float(rng.uniform(0.2, 0.5)), rate))
    pieces.append(np.zeros(int(rng.integers(int(0.03 * rate), int(0.08 * rate)))))
    clean = np.concatenate(pieces)
    power = float(np.mean(clean**2))
    noise = rng.normal(0.0, np.sqrt(power / 10.0 ** (BACKGROUND_SNR_DB / 10.0)), clean.size)
    return Waveform(np.clip(clean + noise, -1.0, 1.0), rate)


def synth_dataset(out_dir, n_utts: int = 250, vocab_size: int = 8, len_range=(3, 8),
                  seed: int = 0) -> dict[str, Path]:
    """Write WAVs plus train/dev/test manifests (80/10/10) under ``out_dir``."""
    if not 1 <= vocab_size <= MAX_SYMBOLS:
        raise ValueError(f"vocab_size must lie in [1, {MAX_SYMBOLS}]")
    lo, hi = len_range
    if not 1 <= lo <= hi:
        raise ValueError(f"bad length range {len_range}")
    if n_utts < 3:
        raise ValueError("need at least three utterances for a three-way split")
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        raise FileExistsError(f"{out} already exists and is not empty")
    wav_dir = out / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    names = symbol_names(vocab_size)
    refs = []
    for n in range(n_utts):
        length = int(rng.integers(lo, hi + 1))
        tokens = rng.integers(0, vocab_size, size=length).tolist()
        uid = f"utt{n:05d}"
        wav_path = wav_dir / f"{uid}.wav"
        write_wav(wav_path, synth_utterance(tokens, rng))
        refs.append(UtteranceRef(uid, wav_path, " ".join(names[k] for k in tokens)))

    n_train = int(round(SPLITS[0][1] * n_utts))
    n_dev = int(round(SPLITS[1][1] * n_utts))
    parts = {"train": refs[:n_train], "dev": refs[n_train : n_train + n_dev],
             "test": refs[n_train + n_dev :]}
    paths = {}
    for split, items in parts.items():
        paths[split] = out / f"{split}.tsv"
        write_manifest(paths[split], items)
    return paths
