"""Finite-length optimal multi-bit schemes.

A scheme lives on the sequence space (size ``n = V**T``) and an auxiliary
space of size ``n + 1`` whose last index is the redundant symbol.  The
decoder is a Latin square on ``n x n`` with the redundant column always
mapped to 0; each message ``j`` therefore corresponds to a perfect matching
between sequences and non-redundant auxiliary values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .optimize import (
    DistortionMetric,
    OptimizerReport,
    beta_star_of,
    minimize_overhang,
)
from .prob import (
    Pmf,
    SequenceSpace,
    iid_extension,
    materialize_limit,
    MaterializationError,
    overhang,
    sample_indices,
)

SCHEMA_VERSION = "1"
COUPLING_MAGIC = b"DEMBCPL1"

FAMILIES = ("cyclic", "modular")


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


def _prime_factors(n: int) -> set[int]:
    out, f = set(), 2
    while f * f <= n:
        while n % f == 0:
            out.add(f)
            n //= f
        f += 1
    if n > 1:
        out.add(n)
    return out


def primitive_root(p: int) -> int:
    if p == 2:
        return 1
    factors = _prime_factors(p - 1)
    for g in range(2, p):
        if all(pow(g, (p - 1) // f, p) != 1 for f in factors):
            return g
    raise ValueError(f"{p} has no primitive root")


@dataclass(frozen=True)
class DecoderSpec:
    """Latin-square decoder ``h(x, z) = ((c*x + z) mod n) + 1``.

    ``c`` is 1 for the cyclic family.  The modular family scrambles the
    sequence coordinate by a primitive root when ``n`` is prime and falls
    back to ``c = 1`` otherwise.
    """

    family: str
    n: int
    m: int
    multiplier: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown decoder family {self.family!r}")
        if self.n < 1 or self.m < 0 or self.m > self.n:
            raise ValueError(f"need 0 <= m <= n, got m={self.m}, n={self.n}")
        if math.gcd(self.multiplier, self.n) != 1:
            raise ValueError("multiplier must be a unit modulo n")

    @classmethod
    def create(cls, family: str, n: int, m: int) -> "DecoderSpec":
        c = 1
        if family == "modular" and _is_prime(n):
            c = primitive_root(n)
        return cls(family, n, m, c)

    @property
    def redundant_index(self) -> int:
        return self.n

    @property
    def _inverse_multiplier(self) -> int:
        return pow(self.multiplier, -1, self.n) if self.n > 1 else 0

    def h(self, x, z):
        x = np.asarray(x, dtype=np.int64)
        z = np.asarray(z, dtype=np.int64)
        return (self.multiplier * x + z) % self.n + 1

    def decode(self, x: int, z: int) -> int:
        if not 0 <= x < self.n:
            raise IndexError(f"sequence index {x} out of range [0, {self.n})")
        if not 0 <= z <= self.n:
            raise IndexError(f"auxiliary index {z} out of range [0, {self.n}]")
        if z == self.redundant_index:
            return 0
        value = int(self.h(x, z))
        return value if value <= self.m else 0

    def decode_many(self, x, z) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        z = np.asarray(z, dtype=np.int64)
        z_safe = np.where(z == self.n, 0, z)
        value = self.h(x, z_safe)
        return np.where((z == self.n) | (value > self.m), 0, value)

    def decode_table(self) -> np.ndarray:
        """Full ``n x (n+1)`` table of decoded messages."""
        x = np.arange(self.n)[:, None]
        z = np.arange(self.n + 1)[None, :]
        return self.decode_many(x, z)

    def matching(self, j: int) -> np.ndarray:
        """Auxiliary index paired with each sequence under message ``j``."""
        if not 1 <= j <= self.n:
            raise ValueError(f"message {j} outside [1, {self.n}]")
        x = np.arange(self.n, dtype=np.int64)
        return (j - 1 - self.multiplier * x) % self.n

    def inverse_matching(self, j: int) -> np.ndarray:
        """Sequence index paired with each non-redundant auxiliary index."""
        z = np.arange(self.n, dtype=np.int64)
        return (self._inverse_multiplier * (j - 1 - z)) % self.n

    @property
    def alignment(self) -> np.ndarray:
        """Pairing used to lay out the auxiliary marginal (message 1)."""
        return self.inverse_matching(1)

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "n": self.n,
            "m": self.m,
            "multiplier": self.multiplier,
            "redundant_index": self.redundant_index,
            "aligned_message": 1,
        }

    @classmethod
    def from_json(cls, data: dict) -> "DecoderSpec":
        return cls(data["family"], int(data["n"]), int(data["m"]), int(data["multiplier"]))


def build_pzeta_star(
    p_x_star: Pmf, alpha: float, m: int, alignment: np.ndarray | None = None
) -> Pmf:
    """Auxiliary marginal: clipped sequence masses plus the overhang on the
    redundant (last) index."""
    if m < 1:
        raise ValueError("m must be at least 1")
    p = np.asarray(p_x_star.probs)
    tau = alpha / m
    n = p.size
    if alignment is None:
        alignment = np.arange(n)
    out = np.empty(n + 1)
    out[:n] = np.minimum(p[alignment], tau)
    out[n] = overhang(p, tau)
    return Pmf(out)


@dataclass(frozen=True)
class CouplingTable:
    message: int
    table: np.ndarray
    x_marginal: Pmf
    zeta_marginal: Pmf
    residual: float

    def marginal_deviation(self) -> float:
        rows = np.abs(self.table.sum(axis=1) - self.x_marginal.probs).max()
        cols = np.abs(self.table.sum(axis=0) - self.zeta_marginal.probs).max()
        return float(max(rows, cols))

    @property
    def total(self) -> float:
        return float(self.table.sum())


def build_coupling(j: int, p_x_star: Pmf, p_zeta_star: Pmf, spec: DecoderSpec) -> CouplingTable:
    """Joint law of (x, zeta) under message ``j``.

    Matched cells carry the maximal-coupling mass; leftover sequence mass is
    spread over leftover auxiliary mass proportionally, normalized by this
    message's own residual so both marginals come out exact.
    """
    n = spec.n
    px = np.asarray(p_x_star.probs)
    pz = np.asarray(p_zeta_star.probs)
    if px.size != n or pz.size != n + 1:
        raise ValueError("marginals do not match the decoder dimensions")
    mz = spec.matching(j)
    paired_x = np.zeros(n + 1)
    paired_x[:n] = px[spec.inverse_matching(j)]
    excess = np.clip(px - pz[mz], 0.0, None)
    deficit = np.clip(pz - paired_x, 0.0, None)
    r = float(excess.sum())
    if r > 0:
        table = np.outer(excess, deficit) / r
    else:
        table = np.zeros((n, n + 1))
    table[np.arange(n), mz] = np.minimum(px, pz[mz])
    table.setflags(write=False)
    return CouplingTable(j, table, p_x_star, p_zeta_star, r)


@dataclass(frozen=True)
class SchemeParams:
    source: Pmf
    V: int
    T: int
    m: int
    alpha: float
    d: float = 0.0
    metric: str = "tv"
    family: str = "cyclic"
    seed: int = 0

    def to_json(self) -> dict:
        return {
            "source": self.source.to_json(),
            "V": self.V,
            "T": self.T,
            "m": self.m,
            "alpha": self.alpha,
            "d": self.d,
            "metric": DistortionMetric.parse(self.metric).value,
            "family": self.family,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SchemeParams":
        return cls(
            source=Pmf(data["source"]),
            V=int(data["V"]),
            T=int(data["T"]),
            m=int(data["m"]),
            alpha=float(data["alpha"]),
            d=float(data["d"]),
            metric=data["metric"],
            family=data["family"],
            seed=int(data["seed"]),
        )


@dataclass
class SchemeBundle:
    params: SchemeParams | None
    p_x_star: Pmf
    p_zeta_star: Pmf
    decoder: DecoderSpec
    couplings: list[CouplingTable]
    beta_star: float
    source_seq: Pmf | None = None
    optimizer: OptimizerReport | None = None
    design_alpha: float | None = None
    _cdfs: dict = field(default_factory=dict, repr=False)

    @property
    def m(self) -> int:
        return self.decoder.m

    @property
    def n(self) -> int:
        return self.decoder.n

    @property
    def alpha(self) -> float:
        if self.design_alpha is not None:
            return self.design_alpha
        return self.params.alpha if self.params else float("nan")

    # sampling interface shared with the asymptotic scheme

    def _cdf(self, j: int) -> np.ndarray:
        if j not in self._cdfs:
            flat = self.couplings[j - 1].table.ravel()
            cdf = np.cumsum(flat)
            cdf[int(np.flatnonzero(flat > 0)[-1]):] = 1.0
            self._cdfs[j] = cdf
        return self._cdfs[j]

    def sample_pairs(self, messages: np.ndarray, rng: np.random.Generator):
        messages = np.asarray(messages)
        u = rng.random(messages.size)
        flat = np.empty(messages.size, dtype=np.int64)
        for j in range(1, self.m + 1):
            sel = messages == j
            if sel.any():
                flat[sel] = np.searchsorted(self._cdf(j), u[sel], side="right")
        return np.divmod(flat, self.n + 1)

    def decode_many(self, x, z) -> np.ndarray:
        return self.decoder.decode_many(x, z)

    def sample_zeta(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return sample_indices(self.p_zeta_star, rng, size)

    def default_h0(self) -> Pmf:
        return self.source_seq if self.source_seq is not None else self.p_x_star

    def worst_case_x(self) -> int:
        accept = self.decoder.decode_table() != 0
        return int(np.argmax(accept @ self.p_zeta_star.probs))


def build_scheme_from_marginal(
    p_x_star: Pmf,
    alpha: float,
    m: int,
    family: str = "cyclic",
    params: SchemeParams | None = None,
    source_seq: Pmf | None = None,
    optimizer: OptimizerReport | None = None,
) -> SchemeBundle:
    n = p_x_star.support_size
    if m > n:
        raise ValueError(f"message set size m={m} exceeds the sequence space size {n}")
    limit = materialize_limit()
    if n * (n + 1) > limit:
        raise MaterializationError(
            f"coupling tables of {n}x{n + 1} exceed the materialization limit {limit}"
        )
    decoder = DecoderSpec.create(family, n, m)
    p_zeta = build_pzeta_star(p_x_star, alpha, m, decoder.alignment)
    couplings = [build_coupling(j, p_x_star, p_zeta, decoder) for j in range(1, m + 1)]
    return SchemeBundle(
        params=params,
        p_x_star=p_x_star,
        p_zeta_star=p_zeta,
        decoder=decoder,
        couplings=couplings,
        beta_star=beta_star_of(p_x_star, alpha, m),
        source_seq=source_seq,
        optimizer=optimizer,
        design_alpha=alpha,
    )


def sequence_source(params: SchemeParams) -> Pmf:
    space = SequenceSpace(params.V, params.T)
    if params.source.support_size == params.V:
        return iid_extension(params.source, space)
    if params.source.support_size == space.size:
        return params.source
    raise ValueError(
        f"source has {params.source.support_size} entries; expected V={params.V} "
        f"or V^T={space.size}"
    )


def build_finite_scheme(params: SchemeParams) -> SchemeBundle:
    """Optimal d-distorted scheme for the given parameters."""
    space = SequenceSpace(params.V, params.T)
    if params.m > space.size:
        raise ValueError(
            f"message set size m={params.m} exceeds |X|^T={space.size}"
        )
    q_seq = sequence_source(params)
    report = minimize_overhang(q_seq, params.alpha, params.m, params.d, params.metric)
    if not report.converged:
        raise RuntimeError(f"distortion program did not converge: {report.status}")
    return build_scheme_from_marginal(
        report.pmf,
        params.alpha,
        params.m,
        params.family,
        params=params,
        source_seq=q_seq,
        optimizer=report,
    )


# --------------------------------------------------------------------------
# serialization


def bundle_to_json(bundle: SchemeBundle) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "kind": "finite_scheme",
        "params": bundle.params.to_json() if bundle.params else None,
        "alpha": bundle.alpha,
        "beta_star": bundle.beta_star,
        "decoder": bundle.decoder.to_json(),
        "p_x_star": bundle.p_x_star.to_json(),
        "p_zeta_star": bundle.p_zeta_star.to_json(),
        "residuals": [c.residual for c in bundle.couplings],
    }
    if bundle.optimizer is not None:
        out["optimizer"] = bundle.optimizer.to_json()
    return out


def bundle_from_json(data: dict) -> SchemeBundle:
    if str(data.get("schema_version")) != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {data.get('schema_version')!r}")
    params = SchemeParams.from_json(data["params"]) if data.get("params") else None
    decoder = DecoderSpec.from_json(data["decoder"])
    p_x = Pmf(data["p_x_star"])
    p_zeta = Pmf(data["p_zeta_star"])
    couplings = [build_coupling(j, p_x, p_zeta, decoder) for j in range(1, decoder.m + 1)]
    source_seq = sequence_source(params) if params else None
    return SchemeBundle(
        params=params,
        p_x_star=p_x,
        p_zeta_star=p_zeta,
        decoder=decoder,
        couplings=couplings,
        beta_star=float(data["beta_star"]),
        source_seq=source_seq,
        design_alpha=float(data["alpha"]) if "alpha" in data else None,
    )


def write_couplings(path: str | Path, bundle: SchemeBundle) -> None:
    """Magic header then every table, row-major little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(COUPLING_MAGIC)
        for c in bundle.couplings:
            fh.write(np.ascontiguousarray(c.table, dtype="<f8").tobytes())


def read_couplings(path: str | Path, m: int, n: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[: len(COUPLING_MAGIC)] != COUPLING_MAGIC:
        raise ValueError("not a coupling dump (bad magic header)")
    body = raw[len(COUPLING_MAGIC):]
    expected = m * n * (n + 1) * 8
    if len(body) != expected:
        raise ValueError(f"coupling dump holds {len(body)} bytes, expected {expected}")
    return np.frombuffer(body, dtype="<f8").reshape(m, n, n + 1)


__all__ = [
    "COUPLING_MAGIC",
    "CouplingTable",
    "DecoderSpec",
    "SchemeBundle",
    "SchemeParams",
    "build_coupling",
    "build_finite_scheme",
    "build_pzeta_star",
    "build_scheme_from_marginal",
    "bundle_from_json",
    "bundle_to_json",
    "read_couplings",
    "write_couplings",
]
