"""Programs over a distortion ball around a source distribution.

Two objectives are supported: the overhang sum (p(x) - alpha/m)_+, which is
the best achievable worst-message error, and the Shannon entropy, which
bounds the achievable embedding rate.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .prob import INF, Pmf, entropy, kl_divergence, overhang, tv_distance

KKT_TOL = 1e-8
MAX_ITER = 100_000


class DistortionMetric(str, enum.Enum):
    TV = "tv"
    KL = "kl"  # D(P || Q), watermarked distribution first

    @classmethod
    def parse(cls, value) -> "DistortionMetric":
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        if key in ("kl_forward", "kl-forward"):
            key = "kl"
        try:
            return cls(key)
        except ValueError:
            raise ValueError(
                f"unsupported distortion metric {value!r}; choose 'tv' or 'kl'"
            ) from None

    def __call__(self, p, q) -> float:
        if self is DistortionMetric.TV:
            return tv_distance(p, q)
        return kl_divergence(p, q)


@dataclass(frozen=True)
class OptimizerReport:
    pmf: Pmf
    objective_value: float
    constraint_value: float
    iterations: int = 0
    kkt_residual: float = 0.0
    converged: bool = True
    status: str = "ok"
    extra: dict = field(default_factory=dict)

    @property
    def argopt(self) -> Pmf:
        return self.pmf

    def to_json(self) -> dict:
        return {
            "argmin_or_argmax": self.pmf.to_json(),
            "objective_value": self.objective_value,
            "constraint_value": self.constraint_value,
            "iterations": self.iterations,
            "kkt_residual": self.kkt_residual,
            "converged": self.converged,
            "status": self.status,
            **self.extra,
        }


def _check_alpha_m(alpha: float, m: int) -> None:
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m!r}")


def beta_star_of(p: Pmf, alpha: float, m: int) -> float:
    """Min-max message error when ``p`` is the watermarked marginal."""
    _check_alpha_m(alpha, m)
    return overhang(p, alpha / m)


def _as_pmf(q) -> Pmf:
    return q if isinstance(q, Pmf) else Pmf(q)


# --------------------------------------------------------------------------
# overhang minimization


def tv_overhang_closed_form(q: Pmf, tau: float, d: float) -> float:
    """Optimal overhang over the TV ball of radius d."""
    q = _as_pmf(q).probs
    fill = float(np.sum(np.clip(tau - q, 0.0, None)))
    return max(overhang(q, tau) - min(d, fill), 1.0 - q.size * tau, 0.0)


def _minimize_overhang_tv(q: np.ndarray, tau: float, d: float) -> OptimizerReport:
    excess = np.clip(q - tau, 0.0, None)
    deficit = np.clip(tau - q, 0.0, None)
    budget = min(d, float(excess.sum()), float(deficit.sum()))
    p = q.copy()
    remaining = budget
    for i in np.argsort(-excess, kind="stable"):
        if remaining <= 0 or excess[i] <= 0:
            break
        take = min(excess[i], remaining)
        p[i] -= take
        remaining -= take
    remaining = budget
    for i in np.argsort(-deficit, kind="stable"):
        if remaining <= 0 or deficit[i] <= 0:
            break
        give = min(deficit[i], remaining)
        p[i] += give
        remaining -= give
    pmf = Pmf(p)
    return OptimizerReport(
        pmf=pmf,
        objective_value=overhang(pmf, tau),
        constraint_value=tv_distance(pmf, q),
        iterations=0,
    )


def _normalize_scale(q: np.ndarray, tau: float, r: float) -> np.ndarray:
    """Solve sum(clip(tau, a q, r a q)) = 1 for a and return the point."""

    def point(a):
        return np.clip(tau, a * q, r * a * q)

    lo, hi = 0.0, 1.0
    # the sum is >= a, so a = 1 always overshoots (or hits) the target
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if point(mid).sum() < 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-17 * hi:
            break
    p = point(hi)
    return p / p.sum()


def _kl_limit_point(q: np.ndarray, tau: float) -> np.ndarray:
    """KL-closest point among those attaining the overhang floor."""
    support = q > 0
    if support.sum() * tau >= 1.0:
        # I-projection of q onto {p <= tau}
        return _normalize_scale(q, tau, r=1e300)
    # I-projection of q onto {p >= tau on the support}
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        s = np.where(support, np.maximum(tau, mid * q), 0.0).sum()
        if s < 1.0:
            lo = mid
        else:
            hi = mid
    p = np.where(support, np.maximum(tau, hi * q), 0.0)
    return p / p.sum()


def _minimize_overhang_kl(
    q: np.ndarray, tau: float, d: float, max_iter: int
) -> OptimizerReport:
    # Stationary points of the Lagrangian are p = median(a q, tau, r a q) with
    # r = exp(1/lambda) >= 1; KL(p || q) grows with r, so bisect on log r.
    limit = _kl_limit_point(q, tau)
    kl_limit = kl_divergence(limit, q)
    if kl_limit <= d:
        pmf = Pmf(limit)
        return OptimizerReport(
            pmf=pmf,
            objective_value=overhang(pmf, tau),
            constraint_value=kl_limit,
            iterations=0,
            kkt_residual=abs(float(limit.sum()) - 1.0),
            extra={"multiplier": 0.0},
        )

    def solve(log_r):
        p = _normalize_scale(q, tau, math.exp(log_r))
        return p, kl_divergence(p, q)

    lo, hi = 0.0, 1.0
    iterations = 0
    # exp() overflows past ~709; by then the point has reached the limit
    while hi < 640.0 and solve(hi)[1] < d and iterations < max_iter:
        lo, hi = hi, min(2.0 * hi, 640.0)
        iterations += 1
    p, kl = solve(lo)
    residual = abs(kl - d)
    while iterations < max_iter:
        iterations += 1
        mid = 0.5 * (lo + hi)
        p_mid, kl_mid = solve(mid)
        if kl_mid <= d:
            lo = mid
            # keep the feasible side as the answer
            p, kl = p_mid, kl_mid
        else:
            hi = mid
        residual = max(abs(kl - d), abs(float(p.sum()) - 1.0))
        if residual < 1e-12 or hi - lo < 1e-15:
            break
    converged = residual < KKT_TOL
    pmf = Pmf(p)
    return OptimizerReport(
        pmf=pmf,
        objective_value=overhang(pmf, tau),
        constraint_value=kl,
        iterations=iterations,
        kkt_residual=residual,
        converged=converged,
        status="ok" if converged else "not_converged",
        extra={"multiplier": 1.0 / max(lo, 1e-300)},
    )


def minimize_overhang(
    q: Pmf,
    alpha: float,
    m: int,
    d: float,
    metric: DistortionMetric | str = DistortionMetric.TV,
    max_iter: int = MAX_ITER,
) -> OptimizerReport:
    """argmin of sum (P(x) - alpha/m)_+ over {P : metric(P, q) <= d}."""
    _check_alpha_m(alpha, m)
    if d < 0:
        raise ValueError("distortion budget must be non-negative")
    metric = DistortionMetric.parse(metric)
    q = _as_pmf(q)
    tau = alpha / m
    qa = q.probs.copy()
    if tau >= qa.max() or d == 0:
        return OptimizerReport(pmf=q, objective_value=overhang(q, tau), constraint_value=0.0)
    if metric is DistortionMetric.TV:
        return _minimize_overhang_tv(qa, tau, d)
    return _minimize_overhang_kl(qa, tau, d, max_iter)


# --------------------------------------------------------------------------
# entropy maximization


def tilt(q: Pmf, beta: float) -> np.ndarray:
    """Escort distribution proportional to q**beta, zeros of q kept at zero."""
    q = _as_pmf(q).probs
    out = np.zeros_like(q)
    support = q > 0
    logs = beta * np.log(q[support])
    logs -= logs.max()
    w = np.exp(logs)
    out[support] = w / w.sum()
    return out


def _level_from_top(q: np.ndarray, s: float) -> float:
    u = np.sort(q)[::-1]
    c = np.cumsum(u)
    n = u.size
    for k in range(1, n + 1):
        h = (c[k - 1] - s) / k
        if k == n or h >= u[k]:
            return h
    raise AssertionError("unreachable")


def _level_from_bottom(q: np.ndarray, s: float) -> float:
    u = np.sort(q)
    c = np.cumsum(u)
    n = u.size
    for k in range(1, n + 1):
        low = (s + c[k - 1]) / k
        if k == n or low <= u[k]:
            return low
    raise AssertionError("unreachable")


def _maximize_entropy_tv(q: np.ndarray, d: float) -> OptimizerReport:
    uniform = np.full(q.size, 1.0 / q.size)
    s = min(d, tv_distance(q, uniform))
    high = _level_from_top(q, s)
    low = _level_from_bottom(q, s)
    pmf = Pmf(np.clip(q, low, high))
    return OptimizerReport(
        pmf=pmf,
        objective_value=entropy(pmf),
        constraint_value=tv_distance(pmf, q),
        extra={"levels": [low, high]},
    )


def _maximize_entropy_kl(q: np.ndarray, d: float, max_iter: int) -> OptimizerReport:
    flattest = tilt(q, 0.0)
    kl_flat = kl_divergence(flattest, q)
    if kl_flat <= d:
        pmf = Pmf(flattest)
        return OptimizerReport(
            pmf=pmf,
            objective_value=entropy(pmf),
            constraint_value=kl_flat,
            extra={"beta": 0.0},
        )
    # KL(P_beta || q) decreases in beta; keep the feasible (upper) side
    lo, hi = 0.0, 1.0
    p, kl = q, 0.0
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        mid = 0.5 * (lo + hi)
        p_mid = tilt(q, mid)
        kl_mid = kl_divergence(p_mid, q)
        if kl_mid > d:
            lo = mid
        else:
            hi = mid
            p, kl = p_mid, kl_mid
        if d - kl < 1e-13 or hi - lo < 1e-16:
            break
    residual = abs(d - kl)
    pmf = Pmf(p)
    return OptimizerReport(
        pmf=pmf,
        objective_value=entropy(pmf),
        constraint_value=kl,
        iterations=iterations,
        kkt_residual=residual,
        converged=residual < KKT_TOL,
        status="ok" if residual < KKT_TOL else "not_converged",
        extra={"beta": hi},
    )


def maximize_entropy(
    q: Pmf,
    d: float,
    metric: DistortionMetric | str = DistortionMetric.KL,
    max_iter: int = MAX_ITER,
) -> OptimizerReport:
    """argmax of H(P) over {P : metric(P, q) <= d}."""
    if d < 0:
        raise ValueError("distortion budget must be non-negative")
    metric = DistortionMetric.parse(metric)
    q = _as_pmf(q)
    if d == 0:
        return OptimizerReport(pmf=q, objective_value=entropy(q), constraint_value=0.0)
    if metric is DistortionMetric.TV:
        return _maximize_entropy_tv(q.probs, d)
    return _maximize_entropy_kl(q.probs, d, max_iter)


# --------------------------------------------------------------------------
# error exponents


def exponent_bound(joints, j: int) -> float:
    """min over i != j of D(P_i || P_j) for the per-symbol joints P_0..P_m."""
    arrays = [np.asarray(_as_pmf(np.ravel(np.asarray(jt))).probs) for jt in joints]
    m = len(arrays) - 1
    if not 1 <= j <= m:
        raise ValueError(f"message index must lie in [1, {m}], got {j}")
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise ValueError("all joints must share the same support")
    return min(kl_divergence(arrays[i], arrays[j]) for i in range(m + 1) if i != j)


def exponent_bound_sweep(
    q: Pmf,
    alpha: float,
    m: int,
    d_values,
    j: int = 1,
    metric: DistortionMetric | str = DistortionMetric.TV,
    objective: str = "overhang",
) -> dict:
    """Maximize :func:`exponent_bound` over candidate marginals in the ball.

    For each budget the marginal comes from :func:`minimize_overhang` (or
    :func:`maximize_entropy`), a single-symbol optimal scheme is built on it,
    and the bound is evaluated on its m couplings plus the null joint
    q x P_zeta.
    """
    from .scheme import build_scheme_from_marginal

    q = _as_pmf(q)
    rows = []
    for d in d_values:
        if objective == "overhang":
            p = minimize_overhang(q, alpha, m, d, metric).pmf
        elif objective == "entropy":
            p = maximize_entropy(q, d, metric).pmf
        else:
            raise ValueError(f"unknown objective {objective!r}")
        bundle = build_scheme_from_marginal(p, alpha, m)
        null = np.zeros_like(bundle.couplings[0].table)
        null[:, :] = np.outer(q.probs, bundle.p_zeta_star.probs)
        joints = [null] + [c.table for c in bundle.couplings]
        rows.append({"d": float(d), "bound": exponent_bound(joints, j)})
    best = max(rows, key=lambda r: r["bound"])
    return {"rows": rows, "max_bound": best["bound"], "argmax_d": best["d"]}
