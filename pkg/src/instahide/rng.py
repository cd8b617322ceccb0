"""Deterministic, splittable random streams.

Every stochastic operation in this package takes an explicit :class:`RngStream`;
nothing reads or writes numpy's global generator. A stream is named by a
64-bit ``(seed, stream)`` pair. Equal pairs reproduce the same byte sequence
on any platform, distinct pairs give statistically independent streams, and
:meth:`RngStream.child` derives fresh stream ids so that per-image, per-epoch,
or per-probe draws never alias each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    # splitmix64 finalizer; good 64-bit avalanche for deriving child ids
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _fold_tag(state: int, tag: int | str) -> int:
    if isinstance(tag, str):
        h = 0
        for byte in tag.encode("utf-8"):
            h = _splitmix64(h ^ byte)
        tag = h
    elif not isinstance(tag, (int, np.integer)):
        raise ValidationError(f"stream tags must be int or str, got {type(tag).__name__}")
    return _splitmix64(state ^ (int(tag) & _MASK64))


@dataclass(frozen=True)
class RngStream:
    """A (seed, stream) pair naming one reproducible random sequence."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)):
                raise ValidationError(f"{name} must be an integer")
            if not 0 <= int(v) < (1 << 64):
                raise ValidationError(f"{name} must fit in 64 unsigned bits, got {v}")
            object.__setattr__(self, name, int(v))

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *tags: int | str) -> "RngStream":
        """Derive an independent stream; equal tag paths give equal streams."""
        if not tags:
            raise ValidationError("child() needs at least one tag")
        state = _splitmix64(self.stream ^ 0xA5A5A5A5A5A5A5A5)
        for tag in tags:
            state = _fold_tag(state, tag)
        return RngStream(self.seed, state)

    def bytes(self, n: int) -> bytes:
        """First ``n`` raw bytes of the stream (used to test reproducibility)."""
        return self.generator().bytes(n)
