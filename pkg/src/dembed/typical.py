"""Typical-set indexing and the asymptotic (large-T) scheme.

Typical sequences are ranked in lexicographic order among themselves.  Ranks
are computed combinatorially from type-class sizes, so they work for spaces
far too large to tabulate; when the space fits in memory a lookup table is
built instead for fast vectorized encode/decode.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .prob import (
    Pmf,
    SequenceSpace,
    entropy,
    iid_extension,
    materialize_limit,
    sample_indices,
)

# slack on the typicality test so float noise never splits a type class
_TYPICAL_SLACK = 1e-12


def compositions(total: int, parts: int):
    """All count vectors of ``parts`` non-negative ints summing to ``total``."""
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(total + parts - 1 - prev - 1)
        yield tuple(out)


@lru_cache(maxsize=None)
def multinomial(counts: tuple[int, ...]) -> int:
    out, n = 1, 0
    for k in counts:
        n += k
        out *= math.comb(n, k)
    return out


def log_likelihood_rate(counts, logp: np.ndarray, T: int) -> float:
    """-(1/T) log P^T(x) for any x of the given type; inf if impossible."""
    total = 0.0
    for k, lp in zip(counts, logp):
        if k:
            if lp == -math.inf:
                return math.inf
            total += k * lp
    return -total / T


@dataclass
class TypicalIndex:
    p: Pmf
    T: int
    eta: float | None = None
    types: list[tuple[int, ...]] = field(init=False)
    sizes: list[int] = field(init=False)
    total_size: int = field(init=False)

    def __post_init__(self):
        if self.eta is None:
            self.eta = self.T ** -0.25
        V = self.p.support_size
        with np.errstate(divide="ignore"):
            self._logp = np.log(self.p.probs)
        H = entropy(self.p)
        self.entropy = H
        self.types = [
            k
            for k in compositions(self.T, V)
            if abs(log_likelihood_rate(k, self._logp, self.T) - H) <= self.eta + _TYPICAL_SLACK
        ]
        self._type_set = frozenset(self.types)
        self.sizes = [multinomial(k) for k in self.types]
        self.total_size = sum(self.sizes)

    @property
    def V(self) -> int:
        return self.p.support_size

    def counts(self, seq) -> tuple[int, ...]:
        c = [0] * self.V
        for s in seq:
            c[s] += 1
        return tuple(c)

    def contains(self, seq) -> bool:
        return len(seq) == self.T and self.counts(seq) in self._type_set

    def probability(self) -> float:
        """P^T of the typical set."""
        total = 0.0
        for k, size in zip(self.types, self.sizes):
            lp = sum(c * l for c, l in zip(k, self._logp) if c)
            total += size * math.exp(lp)
        return total

    def _completions(self, remaining: list[list[int]]) -> int:
        return sum(multinomial(tuple(r)) for r in remaining)

    def rank(self, seq) -> int:
        """Number of typical sequences lexicographically before ``seq``."""
        if not self.contains(seq):
            raise ValueError("sequence is not typical")
        alive = [list(k) for k in self.types]
        r = 0
        for s in seq:
            for smaller in range(s):
                r += sum(multinomial(_minus(k, smaller)) for k in alive if k[smaller] > 0)
            alive = [_minus_list(k, s) for k in alive if k[s] > 0]
        return r

    def unrank(self, r: int) -> tuple[int, ...]:
        if not 0 <= r < self.total_size:
            raise IndexError(f"rank {r} outside [0, {self.total_size})")
        alive = [list(k) for k in self.types]
        out = []
        for _ in range(self.T):
            for s in range(self.V):
                block = sum(multinomial(_minus(k, s)) for k in alive if k[s] > 0)
                if r < block:
                    out.append(s)
                    alive = [_minus_list(k, s) for k in alive if k[s] > 0]
                    break
                r -= block
            else:  # pragma: no cover - guarded by the range check
                raise AssertionError("rank walk fell off the end")
        return tuple(out)

    def rank_table(self) -> np.ndarray:
        """Rank of every sequence index (-1 where atypical); needs V^T in memory."""
        space = SequenceSpace(self.V, self.T)
        limit = materialize_limit()
        if space.size > limit:
            raise ValueError(f"{space.size} sequences exceed the materialization limit {limit}")
        V, T = self.V, self.T
        base = T + 1
        idx = np.arange(space.size, dtype=np.int64)
        key = np.zeros(space.size, dtype=np.int64)
        weights = base ** np.arange(V, dtype=np.int64)
        for _ in range(T):
            idx, digit = np.divmod(idx, V)
            key += weights[digit]
        typical_keys = np.array(
            [sum(c * w for c, w in zip(k, weights.tolist())) for k in self.types], dtype=np.int64
        )
        mask = np.isin(key, typical_keys)
        ranks = np.cumsum(mask) - 1
        return np.where(mask, ranks, -1)


def _minus(k, s) -> tuple[int, ...]:
    out = list(k)
    out[s] -= 1
    return tuple(out)


def _minus_list(k, s) -> list[int]:
    k = list(k)
    k[s] -= 1
    return k


def typical_index(p: Pmf, T: int, eta: float | None = None) -> TypicalIndex:
    return TypicalIndex(p, T, eta)


class AsymptoticScheme:
    """Cyclic typical-set scheme with the auxiliary law equal to the source.

    A typical sequence of rank i is paired with the auxiliary sequence of
    rank ``(i + M - 1) mod n'`` under message M; atypical sequences get an
    independent auxiliary draw.  The decoder inverts the offset when both
    sequences are typical and the offset is a valid message.
    """

    def __init__(self, p_x_star: Pmf, T: int, m: int, alpha: float, eta: float | None = None):
        if m < 1:
            raise ValueError("m must be at least 1")
        self.p = p_x_star
        self.T = T
        self.m = m
        self.alpha = alpha
        self.index = TypicalIndex(p_x_star, T, eta)
        self.eta = self.index.eta
        # auxiliary law equals the source law, so both typical sets coincide
        self.n_prime = self.index.total_size
        H = entropy(p_x_star)
        self.rate_margin = H - (math.log(m) - math.log(alpha)) / T
        self.rate_ok = self.rate_margin >= 0
        if not self.rate_ok:
            warnings.warn(
                f"rate condition violated at T={T}: (ln m - ln alpha)/T exceeds H by "
                f"{-self.rate_margin:.4g} nats",
                stacklevel=2,
            )
        self.space = SequenceSpace(p_x_star.support_size, T)
        self._ranks = None
        self._unranks = None
        self._seq_pmf = None
        if self.space.size <= materialize_limit():
            self._seq_pmf = iid_extension(p_x_star, self.space)
            self._ranks = self.index.rank_table()
            self._unranks = np.flatnonzero(self._ranks >= 0)

    @property
    def materialized(self) -> bool:
        return self._ranks is not None

    # rank helpers that work with or without the lookup table

    def _rank_many(self, x: np.ndarray) -> np.ndarray:
        if self.materialized:
            return self._ranks[x]
        out = np.empty(x.size, dtype=np.int64)
        for i, xi in enumerate(x.tolist()):
            seq = self.space.sequence(int(xi))
            out[i] = self.index.rank(seq) if self.index.contains(seq) else -1
        return out

    def _unrank_many(self, r: np.ndarray) -> np.ndarray:
        if self.materialized:
            return self._unranks[r]
        return np.array(
            [self.space.index(self.index.unrank(int(v))) for v in r.tolist()], dtype=np.int64
        )

    def _sample_sequences(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.materialized:
            return sample_indices(self._seq_pmf, rng, size)
        sym = sample_indices(self.p, rng, size * self.T).reshape(size, self.T)
        return self.space.indices(sym).astype(np.int64)

    # sampling interface shared with SchemeBundle

    def sample_pairs(self, messages: np.ndarray, rng: np.random.Generator):
        messages = np.asarray(messages, dtype=np.int64)
        x = self._sample_sequences(messages.size, rng)
        # always draw the fallback so stream consumption never depends on x
        fallback = self._sample_sequences(messages.size, rng)
        r = self._rank_many(x)
        typical = r >= 0
        z = fallback.copy()
        if typical.any():
            shifted = (r[typical] + messages[typical] - 1) % self.n_prime
            z[typical] = self._unrank_many(shifted)
        return x, z

    def decode_many(self, x, z) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        z = np.asarray(z, dtype=np.int64)
        rx = self._rank_many(x)
        rz = self._rank_many(z)
        both = (rx >= 0) & (rz >= 0)
        value = (rz - rx) % max(self.n_prime, 1) + 1
        return np.where(both & (value <= self.m), value, 0)

    def sample_zeta(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return self._sample_sequences(size, rng)

    def default_h0(self) -> Pmf:
        return self._seq_pmf

    # exact quantities (need the lookup table)

    def exact_errors(self) -> np.ndarray:
        """Per-message error: atypical x always fails; messages beyond n' alias."""
        p_typ = float(self._seq_pmf.probs[self._unranks].sum()) if self.materialized else self.index.probability()
        out = np.full(self.m, 1.0 - p_typ)
        out[np.arange(1, self.m + 1) > self.n_prime] = 1.0
        return out

    def worst_case_false_alarm(self) -> float:
        if not self.materialized:
            raise ValueError("exact worst-case false alarm needs the materialized table")
        w = self._seq_pmf.probs[self._unranks]
        n = w.size
        if n == 0:
            return 0.0
        k = min(self.m, n)
        ext = np.concatenate([[0.0], np.cumsum(np.concatenate([w, w[: k]]))])
        windows = ext[k : k + n] - ext[:n]
        return float(windows.max())

    def worst_case_x(self) -> int:
        w = self._seq_pmf.probs[self._unranks]
        n = w.size
        k = min(self.m, n)
        ext = np.concatenate([[0.0], np.cumsum(np.concatenate([w, w[: k]]))])
        return int(self._unranks[int(np.argmax(ext[k : k + n] - ext[:n]))])


def build_asymptotic_scheme(
    p_x_star: Pmf, T: int, m: int, alpha: float, eta: float | None = None
) -> AsymptoticScheme:
    return AsymptoticScheme(p_x_star, T, m, alpha, eta)
