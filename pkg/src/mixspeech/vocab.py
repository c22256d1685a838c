"""Token inventory with reserved blank / sos / eos ids."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

BLANK, SOS, EOS = 0, 1, 2
RESERVED = ("<blank>", "<sos>", "<eos>")
UNITS = ("char", "phone")


def tokenize(text: str, unit: str = "phone") -> list[str]:
    """Split a transcript into symbols; ``phone`` splits on whitespace."""
    if unit == "phone":
        return text.split()
    if unit == "char":
        return [c for c in text if not c.isspace()]
    raise ValueError(f"unknown vocabulary unit {unit!r}")


class Vocab:
    def __init__(self, symbols: Sequence[str], unit: str = "phone"):
        symbols = list(symbols)
        if len(set(symbols)) != len(symbols):
            raise ValueError("duplicate symbols in vocabulary")
        clash = set(symbols) & set(RESERVED)
        if clash:
            raise ValueError(f"symbols clash with reserved tokens: {sorted(clash)}")
        if unit not in UNITS:
            raise ValueError(f"unknown vocabulary unit {unit!r}")
        self.symbols = symbols
        self.unit = unit
        self.tokens = list(RESERVED) + symbols
        self._index = {tok: i for i, tok in enumerate(self.tokens)}

    @classmethod
    def from_texts(cls, texts: Iterable[str], unit: str = "phone") -> "Vocab":
        seen = sorted({sym for text in texts for sym in tokenize(text, unit)})
        return cls(seen, unit)

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens and self.unit == other.unit

    def encode(self, text: str) -> list[int]:
        try:
            return [self._index[s] for s in tokenize(text, self.unit)]
        except KeyError as exc:
            raise ValueError(f"symbol {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def teacher_forcing(self, targets: Sequence[Sequence[int]]):
        """Decoder inputs (sos + y), outputs (y + eos) and a step mask, eos-padded."""
        u = max(len(y) for y in targets) + 1
        n = len(targets)
        dec_in = np.full((n, u), EOS, dtype=np.int64)
        dec_out = np.full((n, u), EOS, dtype=np.int64)
        mask = np.zeros((n, u))
        for i, y in enumerate(targets):
            dec_in[i, 0] = SOS
            dec_in[i, 1 : len(y) + 1] = y
            dec_out[i, : len(y)] = y
            mask[i, : len(y) + 1] = 1.0
        return dec_in, dec_out, mask
