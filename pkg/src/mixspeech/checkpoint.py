"""Binary checkpoint (``MSPK1``) with a plain-text configuration sidecar.

Layout, all integers little-endian::

    b"MSPK1"
    u32 n_tensors
    n_tensors x (u32 name_len, name utf-8, u32 ndim, ndim x u32 dim)
    float64 data of every tensor, in name-table order
    u8 has_optimizer
      [u64 step, u64 skipped, first moments, second moments (name-table order)]
    u32 rng_len, rng state as JSON (rng_len bytes; empty when absent)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import FeatureConfig
from .models import ModelConfig, Seq2Seq, build_model
from .optim import AdamState
from .vocab import Vocab

MAGIC = b"MSPK1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: Seq2Seq
    feature_cfg: FeatureConfig
    opt_state: AdamState | None = None
    rng_state: dict | None = None
    meta: dict | None = None


def sidecar_path(path) -> Path:
    return Path(str(path) + ".cfg")


def _pack_array(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    params = ckpt.model.params
    names = params.names()
    out = bytearray(MAGIC)
    out += struct.pack("<I", len(names))
    for name in names:
        raw = name.encode("utf-8")
        shape = params[name].shape
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
    for name in names:
        out += _pack_array(params[name].data)
    opt = ckpt.opt_state
    if opt is None:
        out += b"\x00"
    else:
        out += b"\x01" + struct.pack("<QQ", opt.step, opt.skipped)
        for moments in (opt.m, opt.v):
            for name in names:
                out += _pack_array(moments.get(name, np.zeros(params[name].shape)))
    rng = json.dumps(ckpt.rng_state, sort_keys=True).encode() if ckpt.rng_state else b""
    out += struct.pack("<I", len(rng)) + rng
    Path(path).write_bytes(bytes(out))
    sidecar_path(path).write_text(_render_sidecar(ckpt))


def _render_sidecar(ckpt: Checkpoint) -> str:
    lines = [f"model.{k} = {v}" for k, v in ckpt.model.cfg.to_dict().items()]
    fc = ckpt.feature_cfg
    lines += [f"feature.{k} = {getattr(fc, k)}" for k in fc.__dataclass_fields__]
    lines.append(f"vocab.unit = {ckpt.model.vocab.unit}")
    lines.append(f"vocab.symbols = {' '.join(ckpt.model.vocab.symbols)}")
    for k, v in (ckpt.meta or {}).items():
        lines.append(f"meta.{k} = {v}")
    return "\n".join(lines) + "\n"


def _parse_sidecar(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _feature_cfg(kv: dict[str, str]) -> FeatureConfig:
    conv = {"n_fft": int, "n_mels": int, "n_mfcc": int, "sample_rate_hz": int,
            "frame_length_ms": float, "frame_shift_ms": float, "log_floor": float,
            "cmvn": lambda s: s == "True"}
    fields = {k[len("feature."):]: v for k, v in kv.items() if k.startswith("feature.")}
    return FeatureConfig(**{k: conv.get(k, str)(v) for k, v in fields.items()})


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError("checkpoint truncated")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, shape) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)


def load_checkpoint(path) -> Checkpoint:
    kv = _parse_sidecar(sidecar_path(path).read_text())
    model_cfg = ModelConfig.from_dict(
        {k[len("model."):]: v for k, v in kv.items() if k.startswith("model.")}
    )
    vocab = Vocab(kv.get("vocab.symbols", "").split(), kv.get("vocab.unit", "phone"))
    model = build_model(model_cfg, vocab)

    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not an MSPK1 checkpoint")
    (count,) = r.unpack("<I")
    table = []
    for _ in range(count):
        (n,) = r.unpack("<I")
        name = r.take(n).decode("utf-8")
        (ndim,) = r.unpack("<I")
        table.append((name, tuple(r.unpack(f"<{ndim}I")) if ndim else ()))
    arrays = {name: r.array(shape) for name, shape in table}
    model.params.load(arrays)
    opt = None
    if r.take(1) == b"\x01":
        step, skipped = r.unpack("<QQ")
        m = {name: r.array(shape) for name, shape in table}
        v = {name: r.array(shape) for name, shape in table}
        opt = AdamState(step=step, skipped=skipped, m=m, v=v)
    (n_rng,) = r.unpack("<I")
    rng_state = json.loads(r.take(n_rng)) if n_rng else None
    meta = {k[len("meta."):]: v for k, v in kv.items() if k.startswith("meta.")}
    return Checkpoint(model, _feature_cfg(kv), opt, rng_state, meta or None)
