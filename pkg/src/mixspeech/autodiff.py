"""A small tape-based reverse-mode autodiff over numpy float64 arrays.

Operations only record onto a tape while one is active::

    with Tape() as tape:
        loss = (x @ w).tanh().sum()
    tape.backward(loss)

Outside a tape every primitive is a plain numpy computation, which keeps
decoding cheap.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

_local = threading.local()
_debug = False


def set_debug(flag: bool) -> None:
    """Check every primitive output for non-finite values."""
    global _debug
    _debug = bool(flag)


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def sum(self, axis=None):
        return sum_(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Records primitive applications in execution (hence topological) order."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._prev = None

    def __enter__(self) -> "Tape":
        self._prev = getattr(_local, "tape", None)
        _local.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _local.tape = self._prev

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if seed is None:
            if loss.data.size != 1:
                raise ValueError("backward from a non-scalar needs an explicit seed")
            seed = np.ones_like(loss.data)
        loss.grad = np.asarray(seed, dtype=np.float64).reshape(loss.shape)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    inp.grad = np.array(gi, dtype=np.float64, copy=True)
                else:
                    inp.grad = inp.grad + gi
            # interior adjoints are no longer needed once propagated
            node.out.grad = None if node.out is not loss else node.out.grad


def _active_tape() -> Tape | None:
    return getattr(_local, "tape", None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(value: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    if _debug and not np.all(np.isfinite(value)):
        raise NonFiniteError("non-finite value produced by a primitive")
    tape = _active_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return Tensor(value)
    out = Tensor(value, requires_grad=True)
    tape.nodes.append(_Node(out, inputs, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --------------------------------------------------------------------------
# Elementwise
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _record(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _record(a.data * c, (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record(a.data * mask, (a,), lambda g: (g * mask,))


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when rate is 0 or no generator is given."""
    if rate <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return mul(a, Tensor(keep))


# --------------------------------------------------------------------------
# Linear algebra and shape
# --------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _record(ad @ bd, (a, b), back)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def slice_(a: Tensor, index) -> Tensor:
    src = a.shape

    def back(g):
        full = np.zeros(src)
        full[index] = g
        return (full,)

    return _record(a.data[index], (a,), back)


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the adjoint."""
    idx = np.asarray(indices, dtype=np.int64)
    src = a.shape

    def back(g):
        full = np.zeros(src)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)

    return _record(np.take(a.data, idx, axis=axis), (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def sum_(a: Tensor, axis=None) -> Tensor:
    src = a.shape
    value = a.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, src).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _record(np.asarray(value), (a,), back)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    return take(table, ids, axis=0)


# --------------------------------------------------------------------------
# Normalisers
# --------------------------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (a,), back)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def back(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _record(y, (a,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply an elementwise affine map."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def back(g):
        gx_hat = g * gd
        n = xd.shape[-1]
        gx = inv * (
            gx_hat
            - gx_hat.sum(axis=-1, keepdims=True) / n
            - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True) / n
        )
        return gx, _unbroadcast(g * xhat, gd.shape), _unbroadcast(g, bias.shape)

    return _record(xhat * gd + bias.data, (x, gain, bias), back)


def pick(logp: Tensor, targets) -> Tensor:
    """Select ``logp[..., targets]`` along the last axis (one index per row)."""
    idx = np.asarray(targets, dtype=np.int64)
    src = logp.shape
    rows = np.indices(idx.shape)

    def back(g):
        full = np.zeros(src)
        full[(*rows, idx)] = g
        return (full,)

    return _record(logp.data[(*rows, idx)], (logp,), back)


def custom(value: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Record an op whose forward and adjoint are supplied by the caller."""
    return _record(np.asarray(value, dtype=np.float64), tuple(inputs), backward)


# --------------------------------------------------------------------------
# Recurrent primitives
# --------------------------------------------------------------------------


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_cell(gates: Tensor, c_prev: Tensor) -> Tensor:
    """One LSTM update from pre-activations ordered (input, forget, cell, output).

    Returns ``[h, c]`` concatenated on the last axis.
    """
    hdim = c_prev.shape[-1]
    z = gates.data
    i, f = _sig(z[..., :hdim]), _sig(z[..., hdim : 2 * hdim])
    g, o = np.tanh(z[..., 2 * hdim : 3 * hdim]), _sig(z[..., 3 * hdim :])
    cp = c_prev.data
    c = f * cp + i * g
    tc = np.tanh(c)
    h = o * tc

    def back(grad):
        dh, dc = grad[..., :hdim], grad[..., hdim:]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            (dc * g * i * (1.0 - i), dc * cp * f * (1.0 - f), dc * i * (1.0 - g * g),
             dh * tc * o * (1.0 - o)),
            axis=-1,
        )
        return dz, dc * f

    return _record(np.concatenate((h, c), axis=-1), (gates, c_prev), back)


def lstm_scan(xproj: Tensor, w_hh: Tensor, mask: np.ndarray, reverse: bool = False) -> Tensor:
    """Run an LSTM over (B, T, 4H) input projections from a zero state.

    Where ``mask[b, t]`` is 0 the state is carried through unchanged, so a
    reverse scan starts fresh at each sequence's true end and padded frames
    receive no gradient.
    """
    xp = xproj.data
    wh = w_hh.data
    b, t_len, four_h = xp.shape
    hdim = four_h // 4
    m = np.asarray(mask, dtype=np.float64)[:, :, None]
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    h = np.zeros((b, hdim))
    c = np.zeros((b, hdim))
    out = np.empty((b, t_len, hdim))
    cache = [None] * t_len
    for t in order:
        z = xp[:, t] + h @ wh
        i, f = _sig(z[:, :hdim]), _sig(z[:, hdim : 2 * hdim])
        g, o = np.tanh(z[:, 2 * hdim : 3 * hdim]), _sig(z[:, 3 * hdim :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        mt = m[:, t]
        cache[t] = (h, c, i, f, g, o, tc)
        h = mt * h_new + (1.0 - mt) * h
        c = mt * c_new + (1.0 - mt) * c
        out[:, t] = h

    def back(grad):
        dxp = np.zeros_like(xp)
        dwh = np.zeros_like(wh)
        dh = np.zeros((b, hdim))
        dc = np.zeros((b, hdim))
        for t in reversed(list(order)):
            h_prev, c_prev, i, f, g, o, tc = cache[t]
            mt = m[:, t]
            dh = dh + grad[:, t]
            dh_new = mt * dh
            dc_new = mt * dc + dh_new * o * (1.0 - tc * tc)
            dz = np.concatenate(
                (dc_new * g * i * (1.0 - i), dc_new * c_prev * f * (1.0 - f),
                 dc_new * i * (1.0 - g * g), dh_new * tc * o * (1.0 - o)),
                axis=1,
            )
            dxp[:, t] = dz
            dwh += h_prev.T @ dz
            dh = (1.0 - mt) * dh + dz @ wh.T
            dc = (1.0 - mt) * dc + dc_new * f
        return dxp, dwh

    return _record(out, (xproj, w_hh), back)
