import numpy as np
import pytest

from mixspeech.config import ExperimentConfig
from mixspeech.data import synth_dataset
from mixspeech.models import ModelConfig, build_model
from mixspeech.vocab import Vocab


def tiny_vocab(n: int = 4) -> Vocab:
    return Vocab([chr(ord("a") + i) for i in range(n)])


def tiny_model(family: str = "las_mini", width: int = 8, feature_dim: int = 5, n_symbols: int = 4,
               seed: int = 0, **extra):
    vocab = tiny_vocab(n_symbols)
    layers = dict(enc_layers=1, dec_layers=1) if family == "las_mini" else dict(
        enc_layers=1, dec_layers=1, attention_heads=2)
    cfg = ModelConfig(family=family, enc_width=width, dec_width=width, vocab_size=len(vocab),
                      feature_dim=feature_dim, **{**layers, **extra})
    return build_model(cfg, vocab, seed=seed)


@pytest.fixture(scope="session")
def small_corpus_dir(tmp_path_factory):
    """A 40-utterance synthetic set, big enough for plumbing tests."""
    out = tmp_path_factory.mktemp("small_corpus")
    synth_dataset(out / "data", n_utts=40, vocab_size=5, len_range=(2, 4), seed=11)
    return out / "data"


@pytest.fixture
def small_config(small_corpus_dir):
    return ExperimentConfig().with_overrides({
        "dataset.train": str(small_corpus_dir / "train.tsv"),
        "dataset.dev": str(small_corpus_dir / "dev.tsv"),
        "dataset.test": str(small_corpus_dir / "test.tsv"),
        "model.family": "transformer_mini",
        "model.enc_layers": 1,
        "model.dec_layers": 1,
        "model.enc_width": 16,
        "model.dec_width": 16,
        "train.epochs": 2,
        "train.batch_size": 8,
    })


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
