"""Command-line front end.

Every report is JSON with a ``schema_version`` field or CSV with a header
row.  Exit codes: 0 success, 2 bad configuration, 3 validation flags raised
under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import greenred
from .harness import (
    IidFamily,
    SimConfig,
    brute_force_minmax,
    gap_analysis,
    empirical_exponent,
    monte_carlo,
    validate,
)
from .optimize import DistortionMetric, beta_star_of, maximize_entropy, minimize_overhang
from .prob import Pmf, RngSeed, SequenceSpace, iid_extension
from .scheme import (
    SCHEMA_VERSION,
    SchemeParams,
    build_finite_scheme,
    bundle_from_json,
    bundle_to_json,
    write_couplings,
)
from .typical import AsymptoticScheme

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FLAGGED = 3

CSV_COLUMNS = [
    "V", "T", "m", "alpha", "d", "metric", "j",
    "beta_exact", "beta_hat", "ci_lo", "ci_hi", "beta_star", "fa_worst", "seed",
]


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# --------------------------------------------------------------------------
# parsing helpers


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def _load_pmf(args) -> Pmf:
    if getattr(args, "pmf_file", None):
        values = json.loads(Path(args.pmf_file).read_text())
    elif getattr(args, "pmf", None):
        values = _floats(args.pmf)
    else:
        raise ConfigError("--pmf or --pmf-file is required")
    try:
        return Pmf(values)
    except ValueError as exc:
        raise ConfigError(f"--pmf: {exc}") from None


def _check_alpha(alpha):
    if alpha is None or not 0 < alpha < 1:
        raise ConfigError(f"--alpha must lie in (0, 1), got {alpha!r}")


def _check_m(m):
    if m is None or m < 1:
        raise ConfigError(f"--m must be a positive integer, got {m!r}")


def _check_d(d):
    if d is None or d < 0 or not math.isfinite(d):
        raise ConfigError(f"--d must be a finite non-negative number, got {d!r}")


def _jsonable(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return None
        return obj
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def _dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k)) for k in CSV_COLUMNS})
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _common(p: argparse.ArgumentParser, *names: str) -> None:
    if "pmf" in names:
        g = p.add_mutually_exclusive_group()
        g.add_argument("--pmf", help="comma-separated probabilities")
        g.add_argument("--pmf-file", help="JSON array of probabilities")
    if "V" in names:
        p.add_argument("--V", type=int)
    if "T" in names:
        p.add_argument("--T", type=int, default=1)
    if "m" in names:
        p.add_argument("--m", type=int)
    if "alpha" in names:
        p.add_argument("--alpha", type=float)
    if "d" in names:
        p.add_argument("--d", type=float, default=0.0)
    if "metric" in names:
        p.add_argument("--metric", choices=["tv", "kl"], default="tv")
    if "trials" in names:
        p.add_argument("--trials", type=int, default=10_000)
    if "seed" in names:
        p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--strict", action="store_true", help="exit 3 when validation flags are raised")


# --------------------------------------------------------------------------
# subcommands


def cmd_beta_star(args) -> int:
    q = _load_pmf(args)
    _check_alpha(args.alpha)
    _check_m(args.m)
    if args.T > 1:
        q = iid_extension(q, SequenceSpace(q.support_size, args.T))
    _emit(f"{beta_star_of(q, args.alpha, args.m):.12g}\n", args.out)
    return EXIT_OK


def cmd_optimize(args) -> int:
    q = _load_pmf(args)
    _check_d(args.d)
    metric = DistortionMetric.parse(args.metric)
    if args.program == "min-overhang":
        _check_alpha(args.alpha)
        _check_m(args.m)
        if args.T > 1:
            q = iid_extension(q, SequenceSpace(q.support_size, args.T))
        report = minimize_overhang(q, args.alpha, args.m, args.d, metric)
    else:
        # --d is a per-sequence budget; for i.i.d. sources KL is additive over T
        d = args.d / args.T if metric is DistortionMetric.KL else args.d
        report = maximize_entropy(q, d, metric)
    out = report.to_json()
    out.update(schema_version=SCHEMA_VERSION, kind=args.program, metric=metric.value, d=args.d)
    if args.program == "max-entropy":
        out["entropy_bits"] = report.objective_value / math.log(2)
    _emit(_dump_json(out), args.out)
    return EXIT_OK if report.converged or not args.strict else EXIT_FLAGGED


def _params_from_args(args) -> SchemeParams:
    q = _load_pmf(args)
    _check_alpha(args.alpha)
    _check_m(args.m)
    _check_d(args.d)
    V = args.V if args.V is not None else q.support_size
    if args.T < 1 or V < 1:
        raise ConfigError("--V and --T must be positive")
    return SchemeParams(
        source=q, V=V, T=args.T, m=args.m, alpha=args.alpha, d=args.d,
        metric=args.metric, family=args.family, seed=args.seed,
    )


def cmd_build(args) -> int:
    params = _params_from_args(args)
    try:
        bundle = build_finite_scheme(params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _emit(_dump_json(bundle_to_json(bundle)), args.out)
    if args.couplings:
        write_couplings(args.couplings, bundle)
    return EXIT_OK


def _load_bundle(path: str):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read bundle {path!r}: {exc}") from None
    try:
        return bundle_from_json(data)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"malformed bundle {path!r}: {exc}") from None


def cmd_validate(args) -> int:
    bundle = _load_bundle(args.bundle)
    report = validate(bundle)
    _emit(_dump_json(report.to_json()), args.out)
    return EXIT_FLAGGED if args.strict and not report.ok else EXIT_OK


def _sim_config(args) -> SimConfig:
    if args.trials is None or args.trials < 1:
        raise ConfigError(f"--trials must be a positive integer, got {args.trials!r}")
    if args.seed < 0:
        raise ConfigError("--seed must be non-negative")
    h0 = getattr(args, "h0", "source")
    return SimConfig(
        trials=args.trials,
        seed=args.seed,
        h0_source="worst-case" if h0 == "worst-case" else None,
    )


def cmd_simulate(args) -> int:
    cfg = _sim_config(args)
    bundle = _load_bundle(args.bundle)
    report = monte_carlo(bundle, cfg)
    out = report.to_json(include_timing=args.timing)
    out["beta_star"] = bundle.beta_star
    _emit(_dump_json(out), args.out)
    return EXIT_OK


def cmd_asymptotic(args) -> int:
    q = _load_pmf(args)
    _check_alpha(args.alpha)
    _check_m(args.m)
    cfg = _sim_config(args)
    rows = []
    for T in _ints(args.Ts):
        scheme = AsymptoticScheme(q, T, args.m, args.alpha, args.eta)
        report = monte_carlo(scheme, cfg)
        exact = scheme.exact_errors()
        for j in range(1, args.m + 1):
            lo, hi = report.beta_ci[j - 1]
            rows.append({
                "V": q.support_size, "T": T, "m": args.m, "alpha": args.alpha, "d": 0.0,
                "metric": "tv", "j": j, "beta_exact": float(exact[j - 1]),
                "beta_hat": report.beta_hat[j - 1], "ci_lo": lo, "ci_hi": hi,
                "beta_star": None, "fa_worst": report.false_alarm_worst_case, "seed": args.seed,
            })
        rows.append({
            "V": q.support_size, "T": T, "m": args.m, "alpha": args.alpha, "d": 0.0,
            "metric": "tv", "j": 0, "beta_exact": None, "beta_hat": report.false_alarm_hat,
            "ci_lo": report.false_alarm_ci[0], "ci_hi": report.false_alarm_ci[1],
            "beta_star": None, "fa_worst": report.false_alarm_worst_case, "seed": args.seed,
        })
    _emit(_csv_text(rows), args.out)
    return EXIT_OK


def cmd_exponent(args) -> int:
    if args.joints_file:
        joints = json.loads(Path(args.joints_file).read_text())
    else:
        # diagonal coupling against the independent product on 2x2
        joints = [[0.5, 0.0, 0.0, 0.5], [0.25, 0.25, 0.25, 0.25]]
    try:
        family = IidFamily([Pmf(np.ravel(j)) for j in joints], z=args.z)
    except ValueError as exc:
        raise ConfigError(f"joints: {exc}") from None
    cfg = _sim_config(args)
    report = empirical_exponent(family, _ints(args.Ts), args.j, cfg)
    _emit(_dump_json(report.to_json()), args.out)
    return EXIT_OK


def cmd_baseline(args) -> int:
    q = _load_pmf(args)
    try:
        params = greenred.GreenRedParams(q.support_size, args.rho, args.delta, args.key)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    meta = {"schema_version": SCHEMA_VERSION, "initial_token": greenred.INITIAL_TOKEN}
    if args.action == "generate":
        rng = RngSeed(args.seed, 0).generator()
        tokens = greenred.generate(q, args.T, params, rng)
        _emit(json.dumps(tokens) + "\n", args.out)
    elif args.action == "detect":
        if not args.tokens_file:
            raise ConfigError("detect needs --tokens-file")
        tokens = json.loads(Path(args.tokens_file).read_text())
        try:
            result = greenred.detect_z(tokens, params, args.alpha)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        _emit(_dump_json({**meta, **result}), args.out)
    else:
        value = greenred.distortion_of(q, params)
        _emit(_dump_json({**meta, "kind": "distortion", "delta": args.delta, "rho": args.rho,
                          "kl_per_token": value, "kl_per_token_bits": value / math.log(2)}),
              args.out)
    return EXIT_OK


def _sweep_cell(cell):
    q, V, T, m, alpha, d, metric, family, trials, seed = cell
    params = SchemeParams(q, V, T, m, alpha, d, metric, family, seed)
    bundle = build_finite_scheme(params)
    rep = validate(bundle)
    sim = monte_carlo(bundle, SimConfig(trials, seed)) if trials > 0 else None
    rows = []
    for j in range(1, m + 1):
        lo, hi = sim.beta_ci[j - 1] if sim else (None, None)
        rows.append({
            "V": V, "T": T, "m": m, "alpha": alpha, "d": d, "metric": metric, "j": j,
            "beta_exact": rep.beta_exact[j - 1],
            "beta_hat": sim.beta_hat[j - 1] if sim else None,
            "ci_lo": lo, "ci_hi": hi, "beta_star": rep.beta_star,
            "fa_worst": rep.false_alarm_worst_case, "seed": seed,
        })
    return rows, rep.ok


def cmd_sweep(args) -> int:
    q = _load_pmf(args)
    if args.trials < 0:
        raise ConfigError("--trials must be non-negative")
    cells = []
    for T in _ints(args.Ts):
        for m in _ints(args.ms):
            _check_m(m)
            for alpha in _floats(args.alphas):
                _check_alpha(alpha)
                for d in _floats(args.ds):
                    _check_d(d)
                    if m > q.support_size**T:
                        raise ConfigError(f"m={m} exceeds V^T={q.support_size**T}")
                    cells.append((q, q.support_size, T, m, alpha, d, args.metric,
                                  args.family, args.trials, args.seed))
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    rows = [r for rs, _ in results for r in rs]
    _emit(_csv_text(rows), args.out)
    if args.strict and not all(ok for _, ok in results):
        return EXIT_FLAGGED
    return EXIT_OK


def cmd_oracle(args) -> int:
    q = _load_pmf(args)
    _check_alpha(args.alpha)
    _check_m(args.m)
    try:
        report = brute_force_minmax(q, args.alpha, args.m, args.grid_step)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.gap:
        bundle = build_finite_scheme(
            SchemeParams(q, q.support_size, 1, args.m, args.alpha, family=args.family)
        )
        _emit(_dump_json(gap_analysis(validate(bundle), report)), args.out)
    else:
        _emit(_dump_json(report.to_json()), args.out)
    converse = report.value >= report.beta_star - (q.support_size + 1) * args.grid_step
    return EXIT_FLAGGED if args.strict and not converse else EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dembed", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("beta-star", help="min-max message error of a distribution")
    _common(p, "pmf", "T", "m", "alpha")
    p.set_defaults(func=cmd_beta_star)

    p = sub.add_parser("optimize", help="distortion-ball programs")
    p.add_argument("program", choices=["min-overhang", "max-entropy"])
    _common(p, "pmf", "T", "m", "alpha", "d", "metric")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("build", help="construct a finite-length optimal scheme")
    _common(p, "pmf", "V", "T", "m", "alpha", "d", "metric", "seed")
    p.add_argument("--family", choices=["cyclic", "modular"], default="cyclic")
    p.add_argument("--couplings", help="also dump coupling tables to this binary file")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("validate", help="exact checks of a built scheme")
    p.add_argument("bundle")
    _common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="Monte Carlo evaluation of a built scheme")
    p.add_argument("bundle")
    _common(p, "trials", "seed")
    p.add_argument("--h0", choices=["source", "worst-case"], default="source")
    p.add_argument("--timing", action="store_true", help="include wall-clock time")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("asymptotic", help="T-sweep of the typical-set scheme")
    _common(p, "pmf", "m", "alpha", "trials", "seed")
    p.add_argument("--Ts", default="8,12,16,20")
    p.add_argument("--eta", type=float, default=None, help="default T^(-1/4)")
    p.set_defaults(func=cmd_asymptotic)

    p = sub.add_parser("exponent", help="fitted error exponent of an i.i.d. family")
    _common(p, "trials", "seed")
    p.add_argument("--joints-file", help="JSON list of per-symbol joints, hypothesis 0 first")
    p.add_argument("--j", type=int, default=1)
    p.add_argument("--Ts", default="4-12")
    p.add_argument("--z", type=float, default=1.0)
    p.set_defaults(func=cmd_exponent)

    p = sub.add_parser("baseline", help="green-red list baseline")
    p.add_argument("action", choices=["generate", "detect", "distortion"])
    _common(p, "pmf", "T", "seed")
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--delta", type=float, default=2.0)
    p.add_argument("--key", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--tokens-file")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("sweep", help="cartesian parameter grid of finite schemes")
    _common(p, "pmf", "metric", "trials", "seed")
    p.add_argument("--Ts", default="1")
    p.add_argument("--ms", default="2")
    p.add_argument("--alphas", default="0.1")
    p.add_argument("--ds", default="0")
    p.add_argument("--family", choices=["cyclic", "modular"], default="cyclic")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep, trials=0)

    p = sub.add_parser("oracle", help="brute-force min-max search on tiny instances")
    _common(p, "pmf", "m", "alpha")
    p.add_argument("--grid-step", type=float, default=1 / 40)
    p.add_argument("--gap", action="store_true",
                   help="also build the T=1 scheme and report the gap to the oracle")
    p.add_argument("--family", choices=["cyclic", "modular"], default="cyclic")
    p.set_defaults(func=cmd_oracle)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return EXIT_CONFIG
        return args.func(args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run())
