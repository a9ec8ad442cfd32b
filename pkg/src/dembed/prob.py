"""Finite probability distributions, divergences and seeded sampling.

All information quantities are in nats.  ``INF`` is returned (never clamped)
when a divergence is unbounded.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

INF = math.inf

#: default cap on the number of entries any materialized table may hold
DEFAULT_MATERIALIZE_LIMIT = 2**24

_NORMALIZE_TOL = 1e-9
_SUM_TOL = 1e-12


class DimensionError(ValueError):
    pass


class MaterializationError(ValueError):
    pass


def materialize_limit() -> int:
    """Table-size cap, overridable with ``DEMBED_MATERIALIZE_LIMIT``."""
    raw = os.environ.get("DEMBED_MATERIALIZE_LIMIT")
    if raw is None or raw == "":
        return DEFAULT_MATERIALIZE_LIMIT
    value = int(raw)
    if value <= 0:
        raise ValueError("DEMBED_MATERIALIZE_LIMIT must be positive")
    return value


class Pmf:
    """Immutable probability mass function over ``range(support_size)``.

    Inputs whose total deviates from 1 by less than 1e-9 are renormalized;
    anything further off is rejected.
    """

    __slots__ = ("_p",)

    def __init__(self, probs: Iterable[float] | np.ndarray):
        p = np.array(probs, dtype=np.float64).ravel()
        if p.size == 0:
            raise ValueError("empty pmf")
        if not np.all(np.isfinite(p)):
            raise ValueError("pmf entries must be finite")
        if np.any(p < 0):
            raise ValueError(f"negative pmf entry {p.min()!r}")
        total = math.fsum(p)
        if abs(total - 1.0) >= _NORMALIZE_TOL:
            raise ValueError(f"pmf sums to {total!r}, not 1")
        if abs(total - 1.0) > _SUM_TOL:
            p = p / total
        p.setflags(write=False)
        self._p = p

    @classmethod
    def uniform(cls, n: int) -> "Pmf":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def point_mass(cls, n: int, index: int) -> "Pmf":
        p = np.zeros(n)
        p[index] = 1.0
        return cls(p)

    @classmethod
    def from_json(cls, values: Sequence[float]) -> "Pmf":
        return cls(values)

    @property
    def probs(self) -> np.ndarray:
        return self._p

    @property
    def support_size(self) -> int:
        return int(self._p.size)

    def __len__(self) -> int:
        return self.support_size

    def __getitem__(self, i):
        return self._p[i]

    def __array__(self, dtype=None, copy=None):
        return self._p if dtype is None else self._p.astype(dtype)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pmf):
            return NotImplemented
        return self._p.shape == other._p.shape and bool(np.all(self._p == other._p))

    def __hash__(self) -> int:
        return hash(self._p.tobytes())

    def __repr__(self) -> str:
        if self.support_size <= 8:
            return f"Pmf({self._p.tolist()})"
        return f"Pmf(<{self.support_size} entries>)"

    def to_json(self) -> list[float]:
        return [float(v) for v in self._p]


def _as_array(p) -> np.ndarray:
    return p.probs if isinstance(p, Pmf) else np.asarray(p, dtype=np.float64)


def _check_same(p: np.ndarray, q: np.ndarray) -> None:
    if p.shape != q.shape:
        raise DimensionError(f"support sizes differ: {p.shape} vs {q.shape}")


def entropy(p: Pmf) -> float:
    p = _as_array(p)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def kl_divergence(p: Pmf, q: Pmf) -> float:
    """D(p || q); ``INF`` when p charges a point q does not."""
    p, q = _as_array(p), _as_array(q)
    _check_same(p, q)
    mask = p > 0
    if np.any(q[mask] <= 0):
        return INF
    value = float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))
    # rounding can push identical inputs a hair below zero
    return max(value, 0.0)


def tv_distance(p: Pmf, q: Pmf) -> float:
    p, q = _as_array(p), _as_array(q)
    _check_same(p, q)
    return float(np.sum(np.clip(p - q, 0.0, None)))


def overhang(p: Pmf, tau: float) -> float:
    """Mass of p sitting above the level ``tau``: sum of (p(x) - tau)_+."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    p = _as_array(p)
    return float(np.sum(np.clip(p - tau, 0.0, None)))


@dataclass(frozen=True)
class SequenceSpace:
    """Length-T sequences over ``range(V)`` indexed lexicographically.

    Symbol 0 of a sequence is the most significant digit of its index.
    """

    V: int
    T: int

    def __post_init__(self):
        if self.V < 1 or self.T < 1:
            raise ValueError("V and T must be positive")
        if self.V**self.T > 2**64:
            raise ValueError(f"{self.V}^{self.T} sequences do not fit a 64-bit index")

    @property
    def size(self) -> int:
        return self.V**self.T

    def sequence(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.size:
            raise IndexError(index)
        out = [0] * self.T
        for t in range(self.T - 1, -1, -1):
            index, out[t] = divmod(index, self.V)
        return tuple(out)

    def index(self, seq: Sequence[int]) -> int:
        if len(seq) != self.T:
            raise DimensionError(f"expected length {self.T}, got {len(seq)}")
        idx = 0
        for s in seq:
            if not 0 <= s < self.V:
                raise IndexError(s)
            idx = idx * self.V + int(s)
        return idx

    def symbols(self, indices: np.ndarray) -> np.ndarray:
        """Vectorized unrank: array of shape (len(indices), T)."""
        idx = np.asarray(indices, dtype=np.uint64).copy()
        out = np.empty((idx.size, self.T), dtype=np.int64)
        V = np.uint64(self.V)
        for t in range(self.T - 1, -1, -1):
            out[:, t] = (idx % V).astype(np.int64)
            idx //= V
        return out

    def indices(self, symbols: np.ndarray) -> np.ndarray:
        sym = np.asarray(symbols, dtype=np.uint64)
        idx = np.zeros(sym.shape[0], dtype=np.uint64)
        V = np.uint64(self.V)
        for t in range(self.T):
            idx = idx * V + sym[:, t]
        return idx


def iid_extension(p: Pmf, space: SequenceSpace, limit: int | None = None) -> Pmf:
    """Product distribution p^T as a Pmf over lexicographic sequence indices."""
    p = p if isinstance(p, Pmf) else Pmf(p)
    if p.support_size != space.V:
        raise DimensionError(f"pmf has {p.support_size} symbols, space has V={space.V}")
    limit = materialize_limit() if limit is None else limit
    if space.size > limit:
        raise MaterializationError(
            f"{space.size} entries exceed the materialization limit {limit}"
        )
    table = np.ones(1)
    for _ in range(space.T):
        table = np.outer(table, p.probs).ravel()
    return Pmf(table)


def iid_log_prob(p: Pmf, space: SequenceSpace, index: int) -> float:
    """log p^T(x) for a single index, without materializing the table."""
    probs = _as_array(p)
    total = 0.0
    for s in space.sequence(index):
        if probs[s] == 0:
            return -INF
        total += math.log(probs[s])
    return total


@dataclass(frozen=True)
class RngSeed:
    """Root seed plus a stream id; each (seed, stream_id) is its own stream."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not 0 <= v < 2**64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream_id: int) -> "RngSeed":
        return RngSeed(self.seed, stream_id)


def _cdf(p: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(p)
    # pin the top so rounding can never select a trailing zero-mass entry
    last = int(np.flatnonzero(p > 0)[-1])
    cdf[last:] = 1.0
    return cdf


def sample_index(p: Pmf, rng: np.random.Generator) -> int:
    """One inverse-CDF draw over the stored order of p."""
    return int(sample_indices(p, rng, 1)[0])


def sample_indices(p: Pmf, rng: np.random.Generator, size: int) -> np.ndarray:
    cdf = _cdf(_as_array(p))
    u = rng.random(size)
    return np.searchsorted(cdf, u, side="right").astype(np.int64)
