"""Command-line entry point: ``mixspeech <command> [--config C] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import ConfigError, ExperimentConfig
from .data import read_manifest, synth_dataset
from .features import featurize, read_wav, write_features
from .report import plot_sweep, plot_training_curve
from .train import (BETA_GRID, TAU_GRID, beam_decode_corpus, evaluate, load_corpus, sweep,
                    train)

log = logging.getLogger("mixspeech")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["train.seed"] = str(args.seed)
    return cfg.with_overrides(overrides) if overrides else cfg


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


# -- commands ---------------------------------------------------------------


def cmd_synth_data(args) -> int:
    paths = synth_dataset(args.out or "toy_data", n_utts=args.n_utts, vocab_size=args.vocab_size,
                          len_range=(args.min_len, args.max_len),
                          seed=0 if args.seed is None else args.seed)
    for split, path in paths.items():
        print(f"{split}\t{path}")
    return 0


def cmd_featurize(args) -> int:
    cfg = _load_config(args)
    fcfg = cfg.feature_config()
    out = _out_dir(args, "features")
    manifest = args.manifest or cfg["dataset.train"]
    for ref in read_manifest(manifest):
        feats = featurize(read_wav(ref.wav_path), fcfg)
        write_features(out / f"{ref.id}.feat", feats)
        print(f"{ref.id}\t{feats.num_frames}\t{feats.dim}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, "run")
    (out / "config.txt").write_text(cfg.render())
    res = train(cfg, out)
    fig = plot_training_curve(res.log, out / "training_curve.png", cfg["dataset.metric"])
    print(f"best_epoch\t{res.best_epoch}")
    print(f"best_dev_{cfg['dataset.metric']}\t{res.best_dev:.2f}")
    print(f"checkpoint\t{res.checkpoint_path}")
    print(f"trainlog_sha256\t{res.log.digest()}")
    print(f"figure\t{fig}")
    return 0


def _decode_inputs(args):
    cfg = _load_config(args)
    ckpt = load_checkpoint(args.checkpoint)
    manifest = args.manifest or cfg["dataset.test"]
    if not manifest:
        raise ConfigError("no manifest: pass --manifest or set dataset.test")
    refs = read_manifest(manifest)
    try:
        corpus = load_corpus(refs, ckpt.model.vocab, ckpt.feature_cfg)
    except ValueError as exc:
        raise ValueError(f"manifest does not match checkpoint vocabulary: {exc}") from None
    beam = args.beam if args.beam is not None else cfg["train.beam"]
    decode_beta = args.decode_beta if args.decode_beta is not None else cfg.decode_beta
    return cfg, ckpt, corpus, beam, decode_beta


def cmd_eval(args) -> int:
    cfg, ckpt, corpus, beam, decode_beta = _decode_inputs(args)
    metric = (ckpt.meta or {}).get("metric", cfg["dataset.metric"])
    summary = evaluate(ckpt.model, corpus, beam, decode_beta, metric)
    sys.stdout.write(summary.render())
    if args.out:
        (_out_dir(args, ".") / "eval.txt").write_text(summary.render())
    return 0


def cmd_decode(args) -> int:
    _, ckpt, corpus, beam, decode_beta = _decode_inputs(args)
    hyps = beam_decode_corpus(ckpt.model, corpus, beam, decode_beta)
    lines = [f"{uid}\t{h.joint_score!r}\t{' '.join(ckpt.model.vocab.decode(h.tokens))}"
             for uid, h in zip(corpus.ids, hyps)]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        (_out_dir(args, ".") / "hypotheses.tsv").write_text(text)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    values = _floats(args.values) if args.values else list(
        BETA_GRID if args.param == "beta" else TAU_GRID)
    seeds = _ints(args.seeds)
    out = _out_dir(args, f"sweep_{args.param}")
    result = sweep(cfg, args.param, values, seeds, out)
    (out / f"sweep_{args.param}.txt").write_text(result.table())
    (out / f"sweep_{args.param}.tsv").write_text(result.tsv())
    plot_sweep(result, out / f"sweep_{args.param}.png")
    sys.stdout.write(result.table())
    return 0


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="flat key = value config file")
    shared.add_argument("--seed", type=int, help="overrides train.seed (synth-data: dataset seed)")
    shared.add_argument("--out", help="output directory")
    shared.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="config override; repeatable")
    shared.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mixspeech", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", parents=[shared], help="write a synthetic tone-chirp corpus")
    p.add_argument("--n-utts", type=int, default=250)
    p.add_argument("--vocab-size", type=int, default=8)
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=8)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("featurize", parents=[shared], help="write MSFEAT1 feature files")
    p.add_argument("--manifest", help="defaults to dataset.train")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", parents=[shared], help="train one model")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "pooled error rate of a checkpoint"),
                                 ("decode", cmd_decode, "joint beam-search hypotheses")):
        p = sub.add_parser(name, parents=[shared], help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--manifest", help="defaults to dataset.test")
        p.add_argument("--beam", type=int)
        p.add_argument("--decode-beta", type=float)
        p.set_defaults(func=func)

    p = sub.add_parser("sweep", parents=[shared], help="median dev error over a beta or tau grid")
    p.add_argument("--param", choices=["beta", "tau"], required=True)
    p.add_argument("--values", help="comma-separated; defaults to the standard grid")
    p.add_argument("--seeds", default="0,1,2")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileExistsError, FileNotFoundError, ValueError) as exc:
        print(f"mixspeech: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
