"""Keyed, hierarchically splittable random streams.

A :class:`StreamKey` is a root seed plus a path of ``(label, index)`` pairs.
The path is hashed into a 128-bit Philox key, so a stream depends only on
its key and never on the order in which other streams were used.  Chains,
levels, iterations and filter runs each get their own key.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class StreamKey:
    root_seed: int
    path: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "root_seed", int(self.root_seed) & _MASK64)

    def derive(self, label: str, index: int = 0) -> StreamKey:
        return derive(self, label, index)

    def stream(self) -> RandStream:
        return RandStream(self)

    def digest(self) -> int:
        # length-prefixed encoding keeps (label, index) pairs unambiguous
        h = hashlib.blake2b(digest_size=16, person=b"mvpmcmc-stream")
        h.update(self.root_seed.to_bytes(8, "little"))
        for label, index in self.path:
            raw = label.encode()
            h.update(len(raw).to_bytes(2, "little"))
            h.update(raw)
            h.update(int(index).to_bytes(8, "little", signed=True))
        return int.from_bytes(h.digest(), "little")


def derive(parent: StreamKey, label: str, index: int = 0) -> StreamKey:
    if not label:
        raise DomainError("stream label must be nonempty")
    return StreamKey(parent.root_seed, parent.path + ((str(label), int(index)),))


class RandStream:
    """Philox generator keyed by a :class:`StreamKey`.

    Each instance owns its state; two streams built from the same key emit
    the same sequence.
    """

    __slots__ = ("key", "gen")

    def __init__(self, key: StreamKey):
        self.key = key
        self.gen = np.random.Generator(np.random.Philox(key=key.digest()))

    def gaussian_vector(self, dim, scale: float = 1.0) -> np.ndarray:
        return gaussian_vector(self, dim, scale)

    def uniform(self, size=None):
        return self.gen.random(size)

    def integers(self, high, size=None):
        return self.gen.integers(0, high, size=size)


def gaussian_vector(s: RandStream, dim, scale: float = 1.0) -> np.ndarray:
    """Draw i.i.d. N(0, scale) entries; ``scale`` is the variance.

    ``dim`` may be an int or a shape tuple.
    """
    if not scale > 0:
        raise DomainError(f"variance must be positive, got {scale}")
    shape = (dim,) if np.isscalar(dim) else tuple(dim)
    if any(n < 1 for n in shape):
        raise DomainError(f"invalid shape {shape}")
    return np.sqrt(scale) * s.gen.standard_normal(shape)


def uniform(s: RandStream) -> float:
    return float(s.gen.random())
