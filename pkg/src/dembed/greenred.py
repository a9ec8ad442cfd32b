"""Green-red list watermark (zero-bit baseline) with a z-score detector."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from statistics import NormalDist

import numpy as np

from .prob import Pmf, RngSeed, kl_divergence

_MASK64 = (1 << 64) - 1

#: context token assumed before the first generated token
INITIAL_TOKEN = 0


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def context_hash(prev_token: int, key: int) -> int:
    return splitmix64((key & _MASK64) ^ splitmix64(prev_token))


@dataclass(frozen=True)
class GreenRedParams:
    V: int
    rho: float
    delta: float
    key: int = 0

    def __post_init__(self):
        k = self.rho * self.V
        if abs(k - round(k)) > 1e-9 or not 1 <= round(k) <= self.V - 1:
            raise ValueError(f"rho*V must be an integer in [1, V-1], got {k!r}")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")

    @property
    def green_size(self) -> int:
        return round(self.rho * self.V)


def green_mask(prev_token: int, params: GreenRedParams) -> np.ndarray:
    if not 0 <= prev_token < params.V:
        raise IndexError(prev_token)
    return _mask_table(params.V, params.green_size, params.key)[prev_token].copy()


@lru_cache(maxsize=64)
def _mask_table(V: int, k: int, key: int) -> np.ndarray:
    table = np.zeros((V, V), dtype=np.int8)
    for prev in range(V):
        rng = np.random.Generator(np.random.PCG64(context_hash(prev, key)))
        perm = np.arange(V)
        # partial Fisher-Yates: the first k slots are a uniform k-subset
        for i in range(k):
            j = i + int(rng.integers(V - i))
            perm[i], perm[j] = perm[j], perm[i]
        table[prev, perm[:k]] = 1
    table.setflags(write=False)
    return table


def mask_table(params: GreenRedParams) -> np.ndarray:
    """Row ``t`` is the green mask used after previous token ``t``."""
    return _mask_table(params.V, params.green_size, params.key)


def tilt(q: Pmf, mask, delta: float) -> Pmf:
    q = np.asarray(q.probs if isinstance(q, Pmf) else q, dtype=float)
    mask = np.asarray(mask)
    if mask.shape != q.shape:
        raise ValueError("mask and pmf sizes differ")
    w = q * np.exp(delta * (mask == 1))
    return Pmf(w / w.sum())


def _tilted_cdfs(q: Pmf, params: GreenRedParams) -> np.ndarray:
    masks = mask_table(params)
    rows = np.array([tilt(q, masks[t], params.delta).probs for t in range(params.V)])
    cdf = np.cumsum(rows, axis=1)
    cdf[:, -1] = 1.0
    return cdf


def generate_batch(
    q: Pmf, T: int, params: GreenRedParams, rng: np.random.Generator, n: int
) -> np.ndarray:
    """``n`` independent watermarked sequences, shape (n, T)."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if q.support_size != params.V:
        raise ValueError("source and vocabulary sizes differ")
    cdf = _tilted_cdfs(q, params)
    out = np.empty((n, T), dtype=np.int64)
    prev = np.full(n, INITIAL_TOKEN, dtype=np.int64)
    for t in range(T):
        u = rng.random(n)
        tok = (u[:, None] >= cdf[prev]).sum(axis=1)
        # rows with trailing zero mass can leave u >= every cdf entry but the last
        tok = np.minimum(tok, params.V - 1)
        out[:, t] = tok
        prev = tok
    return out


def generate(q: Pmf, T: int, params: GreenRedParams, rng: np.random.Generator) -> list[int]:
    return generate_batch(q, T, params, rng, 1)[0].tolist()


def green_counts(tokens: np.ndarray, params: GreenRedParams) -> np.ndarray:
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    prev = np.concatenate(
        [np.full((tokens.shape[0], 1), INITIAL_TOKEN, dtype=np.int64), tokens[:, :-1]], axis=1
    )
    return mask_table(params)[prev, tokens].sum(axis=1)


def z_threshold(alpha: float) -> float:
    return NormalDist().inv_cdf(1.0 - alpha)


def z_score(green: int | np.ndarray, T: int, rho: float):
    return (green - rho * T) / math.sqrt(T * rho * (1 - rho))


def detect_z(tokens, params: GreenRedParams, alpha: float = 0.05) -> dict:
    """One-sided z-test on the green count; the mask is rebuilt from each
    previous token (the first token uses the fixed initial context)."""
    tokens = list(tokens)
    T = len(tokens)
    if T < 2:
        raise ValueError("detection needs at least two tokens")
    g = int(green_counts(np.array([tokens]), params)[0])
    z = float(z_score(g, T, params.rho))
    thr = z_threshold(alpha)
    return {"z": z, "threshold": thr, "detected": bool(z > thr), "green": g, "T": T}


def detection_rate(
    q: Pmf, T: int, params: GreenRedParams, alpha: float, trials: int, seed: int = 0
) -> float:
    """Fraction of generated sequences flagged by the detector."""
    rng = RngSeed(seed, 0).generator()
    tokens = generate_batch(q, T, params, rng, trials)
    z = z_score(green_counts(tokens, params), T, params.rho)
    return float(np.mean(z > z_threshold(alpha)))


def distortion_of(
    q: Pmf,
    params: GreenRedParams,
    max_exact: int = 200_000,
    mc_masks: int = 20_000,
    seed: int = 0,
) -> float:
    """Expected per-token KL(tilted || q) over a uniformly random green list.

    Exact enumeration of all green lists when there are at most ``max_exact``
    of them, Monte Carlo over lists otherwise.
    """
    V, k = params.V, params.green_size
    if params.delta == 0:
        return 0.0
    if math.comb(V, k) <= max_exact:
        total, count = 0.0, 0
        mask = np.zeros(V, dtype=np.int8)
        for green in itertools.combinations(range(V), k):
            mask[:] = 0
            mask[list(green)] = 1
            total += kl_divergence(tilt(q, mask, params.delta), q)
            count += 1
        return total / count
    rng = RngSeed(seed, 0).generator()
    total = 0.0
    mask = np.zeros(V, dtype=np.int8)
    for _ in range(mc_masks):
        mask[:] = 0
        mask[rng.choice(V, size=k, replace=False)] = 1
        total += kl_divergence(tilt(q, mask, params.delta), q)
    return total / mc_masks
