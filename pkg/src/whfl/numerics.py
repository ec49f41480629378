"""Vector packing and reproducible random streams.

Model vectors are real arrays of even length ``2N``.  For transmission they
are packed into ``N`` complex symbols: the first half carries the real parts
and the second half the imaginary parts.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

Label = Union[str, int]


def pack_complex(v) -> np.ndarray:
    """Pack a real vector of length 2N (last axis) into N complex symbols."""
    v = np.asarray(v, dtype=float)
    two_n = v.shape[-1]
    if two_n % 2:
        raise ValueError(f"odd parameter count: {two_n}")
    n = two_n // 2
    return v[..., :n] + 1j * v[..., n:]


def unpack_complex(w) -> np.ndarray:
    """Inverse of :func:`pack_complex`: real parts first, imaginary parts second."""
    w = np.asarray(w, dtype=complex)
    return np.concatenate([w.real, w.imag], axis=-1)


def _encode(label: Label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("stream indices must be non-negative")
        return int(label)
    # crc32 is stable across processes, unlike hash()
    return zlib.crc32(str(label).encode("utf-8"))


@dataclass(frozen=True)
class RngStream:
    """A labeled position in the random-number tree.

    Identical ``(master_seed, path)`` pairs give identical generators; distinct
    paths map to distinct ``SeedSequence`` spawn keys, hence independent streams.
    """

    master_seed: int
    path: Tuple[Label, ...] = ()

    def child(self, *labels: Label) -> "RngStream":
        return RngStream(self.master_seed, self.path + tuple(labels))

    def seed_sequence(self) -> np.random.SeedSequence:
        key = tuple(_encode(p) for p in self.path)
        return np.random.SeedSequence(self.master_seed, spawn_key=key)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))


def complex_gaussian(stream, n, variance: float = 1.0) -> np.ndarray:
    """Draw ``n`` i.i.d. CN(0, variance) samples.

    ``stream`` may be an :class:`RngStream` or an already-open generator.
    ``n`` may be an int or a shape tuple.  Real and imaginary parts are drawn
    as two consecutive blocks of N(0, variance/2) samples.
    """
    if variance < 0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    gen = stream.generator() if isinstance(stream, RngStream) else stream
    shape = (n,) if np.isscalar(n) else tuple(n)
    g = gen.standard_normal((2,) + shape)
    return np.sqrt(variance / 2.0) * (g[0] + 1j * g[1])
