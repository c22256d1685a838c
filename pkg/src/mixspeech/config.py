"""Flat ``key = value`` experiment configuration.

Unknown keys are rejected so that a typo in a sweep script fails loudly
instead of silently training the default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .augment import NoisePolicy, SpecAugmentPolicy
from .features import FeatureConfig
from .models import ModelConfig
from .optim import AdamHyper

MODES = ("none", "mixspeech", "tri_mix", "specaugment", "noise")


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none") else float(s)


# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "dataset.train": (str, ""),
    "dataset.dev": (str, ""),
    "dataset.test": (str, ""),
    "dataset.unit": (str, "phone"),
    "dataset.metric": (str, "PER"),
    "feature.n_fft": (int, 512),
    "feature.frame_length_ms": (float, 25.0),
    "feature.frame_shift_ms": (float, 10.0),
    "feature.n_mels": (int, 23),
    "feature.n_mfcc": (int, 13),
    "feature.log_floor": (float, 1e-10),
    "feature.window": (str, "hann"),
    "feature.kind": (str, "log_fbank"),
    "model.family": (str, "las_mini"),
    "model.enc_layers": (int, None),
    "model.enc_width": (int, None),
    "model.dec_layers": (int, None),
    "model.dec_width": (int, None),
    "model.attention_heads": (int, 4),
    "model.dropout": (float, 0.0),
    "train.epochs": (int, 20),
    "train.batch_size": (int, 16),
    "train.lr": (float, 3e-3),
    "train.seed": (int, 0),
    "train.beta": (float, 0.3),
    "train.grad_clip": (float, 5.0),
    "train.patience": (int, 0),
    "train.decode_beta": (_opt_float, None),
    "train.beam": (int, 20),
    "train.workers": (int, 1),
    "augment.mode": (str, "none"),
    "augment.tri_mix": (_bool, False),
    "mix.tau": (float, 0.15),
    "mix.alpha": (float, 0.5),
    "mix.epoch_multiplier": (float, 1.5),
    "specaug.F": (int, 15),
    "specaug.mF": (int, 2),
    "specaug.T": (int, 40),
    "specaug.mT": (int, 2),
    "specaug.p": (float, 0.2),
    "noise.snr_db": (float, 5.0),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    values: dict[str, Any] = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})

    def __post_init__(self):
        self.validate()

    def __getitem__(self, key: str):
        return self.values[key]

    # -- construction ------------------------------------------------------

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        values = {k: d for k, (_, d) in SCHEMA.items()}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            values[key] = _convert(key, value.strip(), f"{source}:{lineno}")
        return cls(values)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        cfg = cls.parse(Path(path).read_text(), str(path))
        base = Path(path).parent
        for k in ("dataset.train", "dataset.dev", "dataset.test"):
            v = cfg.values[k]
            if v and not Path(v).is_absolute():
                cfg.values[k] = str(base / v)
        return cfg

    def with_overrides(self, overrides: dict[str, Any]) -> "ExperimentConfig":
        values = dict(self.values)
        for k, v in overrides.items():
            values[k] = _convert(k, v, "override") if isinstance(v, str) else v
        return ExperimentConfig(values)

    def render(self) -> str:
        # unset optional keys are omitted so the text parses back to the same config
        return "".join(f"{k} = {v}\n" for k, v in self.values.items() if v is not None)

    # -- checks ------------------------------------------------------------

    def validate(self) -> None:
        unknown = set(self.values) - set(SCHEMA)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        v = self.values
        if not 0.0 <= v["train.beta"] <= 1.0:
            raise ConfigError("train.beta must lie in [0, 1]")
        if not 0.0 <= v["mix.tau"] <= 1.0:
            raise ConfigError("mix.tau must lie in [0, 1]")
        if v["mix.alpha"] <= 0:
            raise ConfigError("mix.alpha must be positive")
        if v["augment.mode"] not in MODES:
            raise ConfigError(f"augment.mode must be one of {MODES}")
        if v["augment.tri_mix"] and v["augment.mode"] not in ("none", "tri_mix"):
            raise ConfigError("augment.tri_mix conflicts with augment.mode; modes are not stacked")
        if v["dataset.metric"] not in ("PER", "WER"):
            raise ConfigError("dataset.metric must be PER or WER")
        if v["train.batch_size"] < 1 or v["train.epochs"] < 1:
            raise ConfigError("train.batch_size and train.epochs must be positive")

    # -- derived views -----------------------------------------------------

    @property
    def mode(self) -> str:
        return "tri_mix" if self.values["augment.tri_mix"] else self.values["augment.mode"]

    @property
    def decode_beta(self) -> float:
        d = self.values["train.decode_beta"]
        return self.values["train.beta"] if d is None else d

    @property
    def epochs(self) -> int:
        """Epoch budget; the mixing modes get the extra-time multiplier when they mix at all."""
        base = self.values["train.epochs"]
        if self.mode in ("mixspeech", "tri_mix") and self.values["mix.tau"] > 0:
            return int(round(base * self.values["mix.epoch_multiplier"]))
        return base

    def feature_config(self) -> FeatureConfig:
        v = self.values
        return FeatureConfig(
            n_fft=v["feature.n_fft"], frame_length_ms=v["feature.frame_length_ms"],
            frame_shift_ms=v["feature.frame_shift_ms"], n_mels=v["feature.n_mels"],
            n_mfcc=v["feature.n_mfcc"], log_floor=v["feature.log_floor"],
            window=v["feature.window"], kind=v["feature.kind"],
        )

    def model_config(self, vocab_size: int, feature_dim: int) -> ModelConfig:
        v = self.values
        overrides = {k: v[f"model.{k}"] for k in ("enc_layers", "enc_width", "dec_layers",
                                                   "dec_width") if v[f"model.{k}"] is not None}
        return ModelConfig.desk_default(
            v["model.family"], vocab_size=vocab_size, feature_dim=feature_dim,
            attention_heads=v["model.attention_heads"], dropout=v["model.dropout"], **overrides,
        )

    def adam(self) -> AdamHyper:
        return AdamHyper(lr=self.values["train.lr"])

    def specaug_policy(self) -> SpecAugmentPolicy:
        v = self.values
        return SpecAugmentPolicy(v["specaug.F"], v["specaug.mF"], v["specaug.T"], v["specaug.mT"],
                                 v["specaug.p"])

    def noise_policy(self) -> NoisePolicy:
        return NoisePolicy(self.values["noise.snr_db"])


def _convert(key: str, value: str, where: str):
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    parser = SCHEMA[key][0]
    try:
        return parser(value)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key}: {exc}") from None
