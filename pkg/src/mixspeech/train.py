"""Training loop, evaluation and hyper-parameter sweeps."""

from __future__ import annotations

import hashlib
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from . import autodiff as ad
from .augment import add_noise, make_mix_batch, make_tri_batch, spec_augment
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import UtteranceRef, read_manifest
from .decode import beam_search_joint, greedy_ctc_decode
from .features import FeatureConfig, FeatureSequence, Waveform, featurize, read_wav
from .losses import Target, min_frames, weighted_mtl
from .metrics import ErrorCounts, corpus_error_rate, pooled_counts
from .models import Seq2Seq, build_model, greedy_attention_decode, output_lengths
from .optim import AdamState, adam_step, clip_global_norm, collect_grads
from .vocab import Vocab

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "best.mspk"
TRAINLOG_NAME = "trainlog.txt"


@dataclass
class Corpus:
    ids: list[str]
    feats: list[FeatureSequence]
    tokens: list[list[int]]
    waves: list[Waveform] | None = None

    def __len__(self) -> int:
        return len(self.ids)


def load_corpus(refs: Sequence[UtteranceRef], vocab: Vocab, fcfg: FeatureConfig,
                keep_waves: bool = False, workers: int = 1) -> Corpus:
    """Read and featurize every utterance, preserving manifest order."""
    def one(ref):
        w = read_wav(ref.wav_path)
        return w, featurize(w, fcfg)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            done = list(pool.map(one, refs))
    else:
        done = [one(r) for r in refs]
    return Corpus(
        ids=[r.id for r in refs],
        feats=[f for _, f in done],
        tokens=[vocab.encode(r.text) for r in refs],
        waves=[w for w, _ in done] if keep_waves else None,
    )


def pad_batch(frames: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([f.shape[0] for f in frames], dtype=np.int64)
    out = np.zeros((len(frames), lengths.max(), frames[0].shape[1]))
    for i, f in enumerate(frames):
        out[i, : f.shape[0]] = f
    return out, lengths


# --------------------------------------------------------------------------
# Train log
# --------------------------------------------------------------------------


def format_record(record: dict) -> str:
    return " ".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}"
                    for k, v in record.items())


def parse_record(line: str) -> dict:
    out = {}
    for part in line.split():
        k, _, v = part.partition("=")
        try:
            out[k] = int(v)
        except ValueError:
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
    return out


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)
    stream: IO[str] | None = None

    def add(self, record: dict) -> None:
        self.records.append(record)
        if self.stream is not None:
            self.stream.write(format_record(record) + "\n")
            self.stream.flush()

    def text(self) -> str:
        return "".join(format_record(r) + "\n" for r in self.records)

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()

    def steps(self) -> list[dict]:
        return [r for r in self.records if r.get("kind") == "step"]

    def epochs(self) -> list[dict]:
        return [r for r in self.records if r.get("kind") == "epoch"]


@dataclass
class TrainResult:
    model: Seq2Seq
    log: TrainLog
    best_dev: float
    best_epoch: int
    checkpoint_path: Path | None
    feature_cfg: FeatureConfig


# --------------------------------------------------------------------------
# Batch assembly
# --------------------------------------------------------------------------


@dataclass
class Assembled:
    inputs: list[np.ndarray]
    targets: list[Target]
    n_mixed: int
    skipped: int


def _feasible(model_cfg, n_frames: int, tokens: Sequence[int]) -> bool:
    return min_frames(tokens) <= int(output_lengths(model_cfg, [n_frames])[0])


def assemble_batch(cfg: ExperimentConfig, model_cfg, corpus: Corpus, idx: Sequence[int],
                   rng: np.random.Generator) -> Assembled:
    """Apply the configured augmentation and lay the batch out as inputs + weighted targets."""
    mode = cfg.mode
    fcfg = cfg.feature_config()
    feats = [corpus.feats[i] for i in idx]
    if mode == "noise":
        policy = cfg.noise_policy()
        feats = [featurize(add_noise(corpus.waves[i], policy, rng), fcfg) for i in idx]
    elif mode == "specaugment":
        policy = cfg.specaug_policy()
        feats = [spec_augment(f, policy, rng) for f in feats]
    batch = list(zip(feats, [corpus.tokens[i] for i in idx]))

    groups: list[tuple[FeatureSequence, list[tuple[list[int], float]]]] = []
    n_mixed = 0
    if mode == "mixspeech":
        mixed, plain = make_mix_batch(batch, cfg["mix.tau"], cfg["mix.alpha"], rng)
        groups += [(m.x_mix, [(m.y_i, m.lam), (m.y_j, 1.0 - m.lam)]) for m in mixed]
        n_mixed = len(mixed)
    elif mode == "tri_mix":
        mixed, plain = make_tri_batch(batch, cfg["mix.tau"], rng)
        groups += [(m.x_mix, [(y, 1.0 / 3.0) for y in m.targets]) for m in mixed]
        n_mixed = len(mixed)
    else:
        plain = list(range(len(batch)))
    # plain examples first, in batch order, then the mixed ones
    groups = [(batch[i][0], [(batch[i][1], 1.0)]) for i in plain] + groups

    inputs: list[np.ndarray] = []
    targets: list[Target] = []
    skipped = 0
    check_ctc = cfg["train.beta"] > 0
    for x, tgts in groups:
        if check_ctc and not all(_feasible(model_cfg, x.num_frames, y) for y, _ in tgts):
            skipped += 1
            continue
        row = len(inputs)
        inputs.append(x.frames)
        targets += [Target(row, list(y), w) for y, w in tgts]
    return Assembled(inputs, targets, n_mixed, skipped)


# --------------------------------------------------------------------------
# Decoding helpers
# --------------------------------------------------------------------------


def _encode_corpus(model: Seq2Seq, corpus: Corpus, chunk: int = 32):
    for start in range(0, len(corpus), chunk):
        frames = [f.frames for f in corpus.feats[start : start + chunk]]
        x, lengths = pad_batch(frames)
        yield start, model.encode(x, lengths)


def greedy_decode_corpus(model: Seq2Seq, corpus: Corpus, beta: float) -> list[list[int]]:
    """Attention-greedy hypotheses, or CTC-greedy when the attention branch is untrained."""
    hyps: list[list[int]] = []
    for _, enc in _encode_corpus(model, corpus):
        for row in range(enc.states.shape[0]):
            t_len = int(enc.lengths[row])
            if beta >= 1.0:
                hyps.append(greedy_ctc_decode(enc.ctc_logits.data[row, :t_len]))
            else:
                hyps.append(greedy_attention_decode(model, enc, row, t_len))
    return hyps


def beam_decode_corpus(model: Seq2Seq, corpus: Corpus, beam: int, decode_beta: float):
    out = []
    for _, enc in _encode_corpus(model, corpus):
        for row in range(enc.states.shape[0]):
            out.append(beam_search_joint(model, enc, row, beam=beam, decode_beta=decode_beta))
    return out


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


def _streams(seed: int):
    init, shuffle, augment, dropout = np.random.SeedSequence(seed).spawn(4)
    return (int(init.generate_state(1)[0]), np.random.default_rng(shuffle),
            np.random.default_rng(augment), np.random.default_rng(dropout))


def train(cfg: ExperimentConfig, out_dir=None, train_corpus: Corpus | None = None,
          dev_corpus: Corpus | None = None, vocab: Vocab | None = None) -> TrainResult:
    """Train one model; the best-dev parameters are restored before returning.

    Pre-loaded corpora may be passed in to avoid re-featurizing across runs.
    """
    fcfg = cfg.feature_config()
    if vocab is None or train_corpus is None:
        train_refs = read_manifest(cfg["dataset.train"])
        vocab = vocab or Vocab.from_texts([r.text for r in train_refs], cfg["dataset.unit"])
        train_corpus = load_corpus(train_refs, vocab, fcfg, keep_waves=cfg.mode == "noise",
                                   workers=cfg["train.workers"])
    if dev_corpus is None:
        dev_corpus = load_corpus(read_manifest(cfg["dataset.dev"]), vocab, fcfg,
                                 workers=cfg["train.workers"])
    if cfg.mode == "noise" and train_corpus.waves is None:
        raise ValueError("noise augmentation needs the training waveforms")

    init_seed, shuffle_rng, aug_rng, drop_rng = _streams(cfg["train.seed"])
    model_cfg = cfg.model_config(len(vocab), fcfg.dim)
    model = build_model(model_cfg, vocab, seed=init_seed)
    hyper = cfg.adam()
    opt = AdamState()
    beta = cfg["train.beta"]
    drop = drop_rng if model_cfg.dropout > 0 else None

    out = Path(out_dir) if out_dir is not None else None
    stream = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        stream = open(out / TRAINLOG_NAME, "w")
    tlog = TrainLog(stream=stream)
    best_dev, best_epoch, best_params = float("inf"), -1, model.params.snapshot()
    step = 0
    skipped_total = 0
    patience = cfg["train.patience"]
    n = len(train_corpus)
    bs = cfg["train.batch_size"]
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = shuffle_rng.permutation(n)
            for start in range(0, n, bs):
                batch = assemble_batch(cfg, model_cfg, train_corpus, order[start : start + bs],
                                       aug_rng)
                skipped_total += batch.skipped
                if not batch.inputs:
                    continue
                x, lengths = pad_batch(batch.inputs)
                model.params.zero_grad()
                with ad.Tape() as tape:
                    res = weighted_mtl(model, x, lengths, batch.targets, beta, rng=drop,
                                       normalizer=len(batch.inputs))
                loss = float(res.total.data)
                step += 1
                record = dict(kind="step", step=step, epoch=epoch, loss=loss, ctc=res.ctc,
                              ce=res.ce, mtl=res.mtl, mixed=batch.n_mixed,
                              skipped_infeasible=skipped_total)
                if not np.isfinite(loss):
                    record["skipped_batch"] = 1
                    tlog.add(record)
                    continue
                tape.backward(res.total)
                grads = collect_grads(model.params)
                record["grad_norm"] = clip_global_norm(grads, cfg["train.grad_clip"])
                adam_step(model.params, grads, opt, hyper)
                tlog.add(record)

            hyps = greedy_decode_corpus(model, dev_corpus, beta)
            dev = corpus_error_rate(zip(hyps, dev_corpus.tokens))
            tlog.add(dict(kind="epoch", epoch=epoch, dev_error=dev))
            if dev < best_dev:
                best_dev, best_epoch, best_params = dev, epoch, model.params.snapshot()
                if out is not None:
                    save_checkpoint(out / CHECKPOINT_NAME, Checkpoint(
                        model, fcfg, opt, shuffle_rng.bit_generator.state,
                        meta={"epoch": epoch, "dev_error": dev, "metric": cfg["dataset.metric"]}))
            elif patience and epoch - best_epoch >= patience:
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break
    finally:
        if stream is not None:
            stream.close()
    model.params.load(best_params)
    ckpt_path = out / CHECKPOINT_NAME if out is not None else None
    return TrainResult(model, tlog, best_dev, best_epoch, ckpt_path, fcfg)


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


@dataclass
class EvalSummary:
    counts: ErrorCounts
    rate: float
    metric: str
    ids: list[str]
    hypotheses: list
    references: list[list[int]]

    def render(self) -> str:
        c = self.counts
        return (f"{self.metric} {self.rate:.2f}%\n"
                f"S {c.substitutions}\nD {c.deletions}\nI {c.insertions}\nN {c.ref_len}\n")


def evaluate(model: Seq2Seq, corpus: Corpus, beam: int = 20, decode_beta: float = 0.3,
             metric: str = "PER") -> EvalSummary:
    hyps = beam_decode_corpus(model, corpus, beam, decode_beta)
    pairs = list(zip([h.tokens for h in hyps], corpus.tokens))
    counts = pooled_counts(pairs)
    return EvalSummary(counts, 100.0 * counts.rate, metric, corpus.ids, hyps, corpus.tokens)


def evaluate_checkpoint(path, manifest, beam: int = 20, decode_beta: float = 0.3,
                        metric: str | None = None) -> EvalSummary:
    ckpt = load_checkpoint(path)
    refs = read_manifest(manifest)
    try:
        corpus = load_corpus(refs, ckpt.model.vocab, ckpt.feature_cfg)
    except ValueError as exc:
        raise ValueError(f"manifest does not match checkpoint vocabulary: {exc}") from None
    metric = metric or (ckpt.meta or {}).get("metric", "PER")
    return evaluate(ckpt.model, corpus, beam, decode_beta, metric)


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

SWEEP_PARAMS = {"beta": "train.beta", "tau": "mix.tau"}
BETA_GRID = (0.0, 0.3, 0.5, 0.7)
TAU_GRID = (0.0, 0.15, 0.20, 0.30)


@dataclass
class SweepResult:
    param: str
    values: list[float]
    seeds: list[int]
    errors: dict[float, list[float]]
    logs: dict[tuple[float, int], TrainLog]
    metric: str = "PER"

    def medians(self) -> list[float]:
        return [statistics.median(self.errors[v]) for v in self.values]

    def header_cells(self) -> list[str]:
        if self.param == "tau":
            return [f"{v * 100:g}%" for v in self.values]
        return [f"{v:g}" for v in self.values]

    def table(self) -> str:
        """Two aligned rows: the swept values, then the median error per value."""
        label = "β" if self.param == "beta" else "τ"
        head = [label] + self.header_cells()
        row = [self.metric] + [f"{m:.1f}%" for m in self.medians()]
        widths = [max(len(a), len(b)) for a, b in zip(head, row)]
        fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        return fmt(head) + "\n" + fmt(row) + "\n"

    def tsv(self) -> str:
        lines = [f"{self.param}\tseed\tdev_error"]
        for v in self.values:
            for s, e in zip(self.seeds, self.errors[v]):
                lines.append(f"{v:g}\t{s}\t{e!r}")
        lines += [f"{v:g}\tmedian\t{m!r}" for v, m in zip(self.values, self.medians())]
        return "\n".join(lines) + "\n"


def sweep(cfg: ExperimentConfig, param: str, values: Sequence[float], seeds: Sequence[int],
          out_dir=None) -> SweepResult:
    if param not in SWEEP_PARAMS:
        raise ValueError(f"can only sweep {sorted(SWEEP_PARAMS)}")
    key = SWEEP_PARAMS[param]
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{param}={v} outside [0, 1]")
    if param == "tau" and cfg.mode == "none":
        cfg = cfg.with_overrides({"augment.mode": "mixspeech"})
    fcfg = cfg.feature_config()
    train_refs = read_manifest(cfg["dataset.train"])
    vocab = Vocab.from_texts([r.text for r in train_refs], cfg["dataset.unit"])
    train_corpus = load_corpus(train_refs, vocab, fcfg, keep_waves=cfg.mode == "noise")
    dev_corpus = load_corpus(read_manifest(cfg["dataset.dev"]), vocab, fcfg)
    errors: dict[float, list[float]] = {float(v): [] for v in values}
    logs = {}
    for v in values:
        for s in seeds:
            run_cfg = cfg.with_overrides({key: float(v), "train.seed": int(s)})
            run_dir = Path(out_dir) / f"{param}_{v:g}_seed{s}" if out_dir is not None else None
            res = train(run_cfg, run_dir, train_corpus, dev_corpus, vocab)
            errors[float(v)].append(res.best_dev)
            logs[(float(v), int(s))] = res.log
            log.info("%s=%g seed=%d dev=%.2f", param, v, s, res.best_dev)
    return SweepResult(param, [float(v) for v in values], list(seeds), errors, logs,
                       cfg["dataset.metric"])
