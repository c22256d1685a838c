"""Desk-scale joint CTC-attention encoder-decoders.

Two families share one interface:

* ``las_mini``: stacked bidirectional LSTM encoder (no subsampling) and a
  single-layer LSTM decoder with additive attention and input feeding.
* ``transformer_mini``: two stride-2 convolutions over time, sinusoidal
  positions and a pre-norm self-attention encoder; a masked self-attention
  plus cross-attention decoder.

Both expose a per-frame CTC projection on the encoder output.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .vocab import BLANK, EOS, SOS, Vocab

FAMILIES = ("las_mini", "transformer_mini")
MASK_BIAS = -1e30
# the attention decoder never emits these
NEVER_EMITTED = [BLANK, SOS]


@dataclass(frozen=True)
class ModelConfig:
    family: str = "las_mini"
    enc_layers: int = 2
    enc_width: int = 64
    dec_layers: int = 1
    dec_width: int = 64
    vocab_size: int = 11
    feature_dim: int = 23
    attention_heads: int = 4
    dropout: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        for f in ("enc_layers", "enc_width", "dec_layers", "dec_width", "feature_dim",
                  "attention_heads"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be positive")
        if self.vocab_size < 3:
            raise ValueError("vocab_size must leave room for blank, sos and eos")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.family == "transformer_mini":
            if self.enc_width != self.dec_width:
                raise ValueError("transformer_mini needs enc_width == dec_width")
            if self.enc_width % self.attention_heads:
                raise ValueError("width must be divisible by attention_heads")

    @classmethod
    def desk_default(cls, family: str, **overrides) -> "ModelConfig":
        base = {"las_mini": dict(enc_layers=2, enc_width=64, dec_layers=1, dec_width=64),
                "transformer_mini": dict(enc_layers=4, enc_width=64, dec_layers=2,
                                         dec_width=64, attention_heads=4)}[family]
        return cls(family=family, **{**base, **overrides})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        conv = {"int": int, "float": float, "str": str}
        return cls(**{k: conv[kinds[k]](v) for k, v in d.items()})


def output_lengths(cfg: ModelConfig, lengths) -> np.ndarray:
    """Encoder output length T' for each input length T."""
    lengths = np.asarray(lengths, dtype=np.int64)
    if cfg.family == "las_mini":
        return lengths.copy()
    return _ceil_half(_ceil_half(lengths))


def _ceil_half(n):
    return -(-n // 2)


def length_mask(lengths, t_max: int) -> np.ndarray:
    return (np.arange(t_max)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)


def sinusoid_positions(n: int, width: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    rate = np.exp(-math.log(10000.0) * (np.arange(0, width, 2) / width))
    pe = np.zeros((n, width))
    pe[:, 0::2] = np.sin(pos * rate)
    pe[:, 1::2] = np.cos(pos * rate[: width // 2])
    return pe


@dataclass
class Encoded:
    states: ad.Tensor  # (B, T', H)
    ctc_logits: ad.Tensor  # (B, T', V)
    lengths: np.ndarray  # (B,)

    @property
    def mask(self) -> np.ndarray:
        return length_mask(self.lengths, self.states.shape[1])


class Parameters:
    """Named tensors in a fixed insertion order."""

    def __init__(self):
        self._items: dict[str, ad.Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> ad.Tensor:
        if name in self._items:
            raise KeyError(f"duplicate parameter {name}")
        t = ad.Tensor(value, requires_grad=True, name=name)
        self._items[name] = t
        return t

    def __getitem__(self, name: str) -> ad.Tensor:
        return self._items[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def items(self):
        return self._items.items()

    def names(self) -> list[str]:
        return list(self._items)

    def zero_grad(self) -> None:
        for t in self._items.values():
            t.grad = None

    def count(self) -> int:
        return sum(t.data.size for t in self._items.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._items.items()}

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self._items):
            raise ValueError("parameter names do not match")
        for k, t in self._items.items():
            if arrays[k].shape != t.shape:
                raise ValueError(f"shape mismatch for {k}: {arrays[k].shape} vs {t.shape}")
            t.data = np.array(arrays[k], dtype=np.float64)


class _Init:
    def __init__(self, params: Parameters, rng: np.random.Generator):
        self.params = params
        self.rng = rng

    def uniform(self, name, shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return self.params.add(name, self.rng.uniform(-bound, bound, size=shape))

    def linear(self, name, n_in, n_out):
        self.uniform(f"{name}.w", (n_in, n_out), n_in)
        self.uniform(f"{name}.b", (n_out,), n_in)

    def norm(self, name, width):
        self.params.add(f"{name}.gain", np.ones(width))
        self.params.add(f"{name}.bias", np.zeros(width))


def _linear(p: Parameters, name: str, x: ad.Tensor) -> ad.Tensor:
    return ad.add(ad.matmul(x, p[f"{name}.w"]), p[f"{name}.b"])


def _norm(p: Parameters, name: str, x: ad.Tensor) -> ad.Tensor:
    return ad.layer_norm(x, p[f"{name}.gain"], p[f"{name}.bias"])


class Seq2Seq:
    """Shared plumbing; subclasses build parameters and the two passes."""

    def __init__(self, cfg: ModelConfig, vocab: Vocab, seed: int = 0):
        if len(vocab) != cfg.vocab_size:
            raise ValueError(f"vocab has {len(vocab)} tokens, config says {cfg.vocab_size}")
        self.cfg = cfg
        self.vocab = vocab
        self.params = Parameters()
        self._build(_Init(self.params, np.random.default_rng(seed)))
        self.record_attention = False
        self.attention: list[np.ndarray] = []

    def _build(self, init: _Init) -> None:
        raise NotImplementedError

    def encode(self, x, lengths, rng=None) -> Encoded:
        raise NotImplementedError

    def decode_train(self, enc: Encoded, rows, dec_in, rng=None) -> ad.Tensor:
        raise NotImplementedError

    def init_state(self, enc: Encoded, row: int, n: int):
        raise NotImplementedError

    def step(self, state, tokens):
        """Advance n hypotheses by one token each; returns (log-probs (n, V), state)."""
        raise NotImplementedError

    def select(self, state, idx):
        """Reorder / subset decoder states by hypothesis index."""
        raise NotImplementedError

    def _drop(self, x, rng):
        return ad.dropout(x, self.cfg.dropout, rng)

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x.data if isinstance(x, ad.Tensor) else x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.cfg.feature_dim:
            raise ValueError(
                f"expected (B, T, {self.cfg.feature_dim}) features, got {x.shape}"
            )
        return x


# --------------------------------------------------------------------------
# LAS-mini
# --------------------------------------------------------------------------


class LasMini(Seq2Seq):
    def _build(self, init: _Init) -> None:
        c = self.cfg
        h = c.enc_width
        n_in = c.feature_dim
        for layer in range(c.enc_layers):
            for d in ("fwd", "bwd"):
                init.uniform(f"enc.{layer}.{d}.wx", (n_in, 4 * h), n_in)
                init.uniform(f"enc.{layer}.{d}.wh", (h, 4 * h), h)
                init.uniform(f"enc.{layer}.{d}.b", (4 * h,), n_in)
            n_in = 2 * h
        init.linear("ctc", 2 * h, c.vocab_size)
        e, hd = c.dec_width, c.dec_width
        init.uniform("dec.embed", (c.vocab_size, e), e)
        init.uniform("dec.lstm.wx", (e + 2 * h, 4 * hd), e + 2 * h)
        init.uniform("dec.lstm.wh", (hd, 4 * hd), hd)
        init.uniform("dec.lstm.b", (4 * hd,), e + 2 * h)
        init.uniform("att.wq", (hd, hd), hd)
        init.uniform("att.wk", (2 * h, hd), 2 * h)
        init.uniform("att.v", (hd, 1), hd)
        init.linear("out", hd + 2 * h, c.vocab_size)

    def encode(self, x, lengths, rng=None) -> Encoded:
        p = self.params
        x = self._check_input(x)
        lengths = np.asarray(lengths, dtype=np.int64)
        mask = length_mask(lengths, x.shape[1])
        h = ad.Tensor(x * mask[:, :, None])
        for layer in range(self.cfg.enc_layers):
            outs = []
            for d in ("fwd", "bwd"):
                xp = ad.add(ad.matmul(h, p[f"enc.{layer}.{d}.wx"]), p[f"enc.{layer}.{d}.b"])
                outs.append(ad.lstm_scan(xp, p[f"enc.{layer}.{d}.wh"], mask, reverse=d == "bwd"))
            h = self._drop(ad.concat(outs, axis=-1), rng)
        return Encoded(h, _linear(p, "ctc", h), output_lengths(self.cfg, lengths))

    def _attend(self, keys, values, bias, query_h):
        p = self.params
        q = ad.matmul(query_h, p["att.wq"])  # (N, A)
        n, a = q.shape
        s = ad.tanh(ad.add(keys, ad.reshape(q, (n, 1, a))))
        e = ad.add(ad.reshape(ad.matmul(s, p["att.v"]), (n, -1)), bias)
        w = ad.softmax(e)
        if self.record_attention:
            self.attention.append(w.data.copy())
        ctx = ad.matmul(ad.reshape(w, (n, 1, -1)), values)
        return ad.reshape(ctx, (n, values.shape[-1]))

    def _dec_step(self, keys, values, bias, h, c, ctx, tokens, rng=None):
        p = self.params
        emb = ad.embedding_lookup(p["dec.embed"], tokens)
        inp = ad.concat([emb, ctx], axis=-1)
        gates = ad.add(ad.add(ad.matmul(inp, p["dec.lstm.wx"]), ad.matmul(h, p["dec.lstm.wh"])),
                       p["dec.lstm.b"])
        hc = ad.lstm_cell(gates, c)
        hd = self.cfg.dec_width
        h, c = hc[:, :hd], hc[:, hd:]
        ctx = self._attend(keys, values, bias, h)
        logits = _linear(p, "out", self._drop(ad.concat([h, ctx], axis=-1), rng))
        return logits, h, c, ctx

    def _prepare(self, enc: Encoded, rows):
        rows = np.asarray(rows, dtype=np.int64)
        values = ad.take(enc.states, rows, axis=0)
        keys = ad.matmul(values, self.params["att.wk"])
        bias = (1.0 - enc.mask[rows]) * MASK_BIAS
        return keys, values, bias

    def decode_train(self, enc: Encoded, rows, dec_in, rng=None) -> ad.Tensor:
        dec_in = np.asarray(dec_in, dtype=np.int64)
        if dec_in.ndim != 2 or dec_in.shape[1] == 0:
            raise ValueError("decoder input must be a non-empty (N, U) id matrix")
        keys, values, bias = self._prepare(enc, rows)
        n = dec_in.shape[0]
        h = ad.Tensor(np.zeros((n, self.cfg.dec_width)))
        c = ad.Tensor(np.zeros((n, self.cfg.dec_width)))
        ctx = ad.Tensor(np.zeros((n, values.shape[-1])))
        steps = []
        for u in range(dec_in.shape[1]):
            logits, h, c, ctx = self._dec_step(keys, values, bias, h, c, ctx, dec_in[:, u], rng)
            steps.append(ad.reshape(logits, (n, 1, -1)))
        return ad.concat(steps, axis=1)

    def init_state(self, enc: Encoded, row: int, n: int):
        keys, values, bias = self._prepare(enc, np.full(n, row))
        hd = self.cfg.dec_width
        zeros = np.zeros((n, hd))
        return dict(keys=keys, values=values, bias=bias, h=ad.Tensor(zeros),
                    c=ad.Tensor(zeros.copy()), ctx=ad.Tensor(np.zeros((n, values.shape[-1]))))

    def step(self, state, tokens):
        logits, h, c, ctx = self._dec_step(state["keys"], state["values"], state["bias"],
                                           state["h"], state["c"], state["ctx"],
                                           np.asarray(tokens, dtype=np.int64))
        new = dict(state, h=h, c=c, ctx=ctx)
        return ad.log_softmax(logits).data, new

    def select(self, state, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return {k: (ad.Tensor(v.data[idx]) if isinstance(v, ad.Tensor) else v[idx])
                for k, v in state.items()}


# --------------------------------------------------------------------------
# Transformer-mini
# --------------------------------------------------------------------------


def _conv_gather_index(t_in: int) -> np.ndarray:
    """Kernel-3, stride-2, pad-1 window indices into a sequence padded by one frame each side."""
    t_out = _ceil_half(t_in)
    centres = 2 * np.arange(t_out) + 1  # position of frame 2j after left padding
    return centres[:, None] + np.array([-1, 0, 1])[None, :]


class TransformerMini(Seq2Seq):
    ffn_mult = 4

    def _build(self, init: _Init) -> None:
        c = self.cfg
        w = c.enc_width
        init.linear("front.conv1", 3 * c.feature_dim, w)
        init.linear("front.conv2", 3 * w, w)
        for layer in range(c.enc_layers):
            pre = f"enc.{layer}"
            init.norm(f"{pre}.ln1", w)
            init.linear(f"{pre}.qkv", w, 3 * w)
            init.linear(f"{pre}.proj", w, w)
            init.norm(f"{pre}.ln2", w)
            init.linear(f"{pre}.ff1", w, self.ffn_mult * w)
            init.linear(f"{pre}.ff2", self.ffn_mult * w, w)
        init.norm("enc.ln_out", w)
        init.linear("ctc", w, c.vocab_size)
        init.uniform("dec.embed", (c.vocab_size, w), w)
        for layer in range(c.dec_layers):
            pre = f"dec.{layer}"
            init.norm(f"{pre}.ln1", w)
            init.linear(f"{pre}.self_qkv", w, 3 * w)
            init.linear(f"{pre}.self_proj", w, w)
            init.norm(f"{pre}.ln2", w)
            init.linear(f"{pre}.cross_q", w, w)
            init.linear(f"{pre}.cross_kv", w, 2 * w)
            init.linear(f"{pre}.cross_proj", w, w)
            init.norm(f"{pre}.ln3", w)
            init.linear(f"{pre}.ff1", w, self.ffn_mult * w)
            init.linear(f"{pre}.ff2", self.ffn_mult * w, w)
        init.norm("dec.ln_out", w)
        init.linear("out", w, c.vocab_size)

    # -- attention ---------------------------------------------------------

    def _split_heads(self, x: ad.Tensor) -> ad.Tensor:
        b, t, w = x.shape
        h = self.cfg.attention_heads
        return ad.transpose(ad.reshape(x, (b, t, h, w // h)), (0, 2, 1, 3))

    def _merge_heads(self, x: ad.Tensor) -> ad.Tensor:
        b, h, t, d = x.shape
        return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, t, h * d))

    def _attention(self, q, k, v, bias, record=False):
        qh, kh, vh = self._split_heads(q), self._split_heads(k), self._split_heads(v)
        d = qh.shape[-1]
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(d))
        w = ad.softmax(ad.add(scores, bias))
        if record and self.record_attention:
            self.attention.append(w.data.copy())
        return self._merge_heads(ad.matmul(w, vh))

    def _conv(self, name: str, x: ad.Tensor, lengths: np.ndarray) -> tuple[ad.Tensor, np.ndarray]:
        b, t, d = x.shape
        pad_right = 2 if t % 2 == 0 else 1
        padded = ad.concat([ad.Tensor(np.zeros((b, 1, d))), x,
                            ad.Tensor(np.zeros((b, pad_right, d)))], axis=1)
        idx = _conv_gather_index(t)
        windows = ad.take(padded, idx.reshape(-1), axis=1)
        windows = ad.reshape(windows, (b, idx.shape[0], 3 * d))
        out_len = _ceil_half(lengths)
        y = ad.relu(_linear(self.params, name, windows))
        # frames past each sequence's end must stay zero for the next stride
        return ad.mul(y, length_mask(out_len, idx.shape[0])[:, :, None]), out_len

    # -- passes ------------------------------------------------------------

    def encode(self, x, lengths, rng=None) -> Encoded:
        p = self.params
        x = self._check_input(x)
        lengths = np.asarray(lengths, dtype=np.int64)
        h = ad.Tensor(x * length_mask(lengths, x.shape[1])[:, :, None])
        h, l1 = self._conv("front.conv1", h, lengths)
        h, l2 = self._conv("front.conv2", h, l1)
        b, t, w = h.shape
        h = ad.add(h, sinusoid_positions(t, w))
        bias = ((1.0 - length_mask(l2, t)) * MASK_BIAS)[:, None, None, :]
        for layer in range(self.cfg.enc_layers):
            pre = f"enc.{layer}"
            a = _norm(p, f"{pre}.ln1", h)
            qkv = _linear(p, f"{pre}.qkv", a)
            q, k, v = qkv[..., :w], qkv[..., w : 2 * w], qkv[..., 2 * w :]
            att = _linear(p, f"{pre}.proj", self._attention(q, k, v, bias))
            h = ad.add(h, self._drop(att, rng))
            f = ad.relu(_linear(p, f"{pre}.ff1", _norm(p, f"{pre}.ln2", h)))
            h = ad.add(h, self._drop(_linear(p, f"{pre}.ff2", f), rng))
        h = _norm(p, "enc.ln_out", h)
        return Encoded(h, _linear(p, "ctc", h), l2)

    def _decode(self, mem: ad.Tensor, mem_bias: np.ndarray, dec_in: np.ndarray, rng=None):
        p = self.params
        n, u = dec_in.shape
        w = self.cfg.dec_width
        h = ad.add(ad.embedding_lookup(p["dec.embed"], dec_in), sinusoid_positions(u, w))
        causal = np.triu(np.full((u, u), MASK_BIAS), k=1)[None, None]
        for layer in range(self.cfg.dec_layers):
            pre = f"dec.{layer}"
            a = _norm(p, f"{pre}.ln1", h)
            qkv = _linear(p, f"{pre}.self_qkv", a)
            q, k, v = qkv[..., :w], qkv[..., w : 2 * w], qkv[..., 2 * w :]
            h = ad.add(h, self._drop(_linear(p, f"{pre}.self_proj",
                                             self._attention(q, k, v, causal)), rng))
            a = _norm(p, f"{pre}.ln2", h)
            q = _linear(p, f"{pre}.cross_q", a)
            kv = _linear(p, f"{pre}.cross_kv", mem)
            ctx = self._attention(q, kv[..., :w], kv[..., w:], mem_bias,
                                  record=layer == self.cfg.dec_layers - 1)
            h = ad.add(h, self._drop(_linear(p, f"{pre}.cross_proj", ctx), rng))
            f = ad.relu(_linear(p, f"{pre}.ff1", _norm(p, f"{pre}.ln3", h)))
            h = ad.add(h, self._drop(_linear(p, f"{pre}.ff2", f), rng))
        return _linear(p, "out", _norm(p, "dec.ln_out", h))

    def _memory(self, enc: Encoded, rows):
        rows = np.asarray(rows, dtype=np.int64)
        mem = ad.take(enc.states, rows, axis=0)
        bias = ((1.0 - enc.mask[rows]) * MASK_BIAS)[:, None, None, :]
        return mem, bias

    def decode_train(self, enc: Encoded, rows, dec_in, rng=None) -> ad.Tensor:
        dec_in = np.asarray(dec_in, dtype=np.int64)
        if dec_in.ndim != 2 or dec_in.shape[1] == 0:
            raise ValueError("decoder input must be a non-empty (N, U) id matrix")
        mem, bias = self._memory(enc, rows)
        return self._decode(mem, bias, dec_in, rng)

    def init_state(self, enc: Encoded, row: int, n: int):
        mem, bias = self._memory(enc, np.full(n, row))
        return dict(mem=mem, bias=bias, prefix=np.zeros((n, 0), dtype=np.int64))

    def step(self, state, tokens):
        prefix = np.concatenate([state["prefix"], np.asarray(tokens, dtype=np.int64)[:, None]],
                                axis=1)
        logits = self._decode(state["mem"], state["bias"], prefix)
        return ad.log_softmax(logits[:, -1]).data, dict(state, prefix=prefix)

    def select(self, state, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return dict(mem=ad.Tensor(state["mem"].data[idx]), bias=state["bias"][idx],
                    prefix=state["prefix"][idx])


def build_model(cfg: ModelConfig, vocab: Vocab, seed: int = 0) -> Seq2Seq:
    cls = {"las_mini": LasMini, "transformer_mini": TransformerMini}[cfg.family]
    return cls(cfg, vocab, seed)


def encoder_forward(model: Seq2Seq, x, lengths) -> Encoded:
    return model.encode(x, lengths)


def decoder_forward(model: Seq2Seq, enc: Encoded, rows, y_in) -> ad.Tensor:
    return model.decode_train(enc, rows, y_in)


def greedy_attention_decode(model: Seq2Seq, enc: Encoded, row: int, max_len: int) -> list[int]:
    """Argmax decoding with the attention decoder alone, stopping at eos."""
    state = model.init_state(enc, row, 1)
    token = SOS
    out: list[int] = []
    for _ in range(max_len):
        logp, state = model.step(state, [token])
        logp[:, NEVER_EMITTED] = -np.inf
        token = int(np.argmax(logp[0]))
        if token == EOS:
            break
        out.append(token)
    return out

