import math

import numpy as np
import pytest

from conftest import assert_converse
from dembed.harness import (
    IidFamily,
    SimConfig,
    brute_force_minmax,
    empirical_exponent,
    exact_errors,
    gap_analysis,
    monte_carlo,
    validate,
    wilson_interval,
    worst_case_false_alarm,
)
from dembed.prob import Pmf
from dembed.scheme import SchemeParams, build_finite_scheme, build_scheme_from_marginal


class TestWilson:
    # frozen from an independent statistics package (wilson method, 95%)
    @pytest.mark.parametrize(
        "k,n,lo,hi",
        [
            (30, 100, 0.21894885294932756, 0.39584854633346667),
            (0, 50, 0.0, 0.07134759913335874),
            (50, 50, 0.9286524008666412, 1.0),
        ],
    )
    def test_frozen(self, k, n, lo, hi):
        got = wilson_interval(k, n)
        assert got[0] == pytest.approx(lo, abs=1e-14)
        assert got[1] == pytest.approx(hi, abs=1e-14)

    def test_empty(self):
        assert wilson_interval(0, 0) == (0.0, 1.0)


class TestExact:
    def test_misaligned_bundle(self):
        b = build_scheme_from_marginal(Pmf([0.7, 0.3]), 0.8, 2)
        np.testing.assert_allclose(exact_errors(b), [0.3, 0.4], atol=1e-12)
        assert worst_case_false_alarm(b.decoder, b.p_zeta_star) == pytest.approx(0.7)

    def test_worst_case_by_enumeration(self):
        b = build_scheme_from_marginal(Pmf([0.4, 0.3, 0.2, 0.1]), 0.5, 3, "modular")
        pz = b.p_zeta_star.probs
        worst = max(
            sum(pz[z] for z in range(b.n + 1) if b.decoder.decode(x, z) != 0) for x in range(b.n)
        )
        assert worst_case_false_alarm(b.decoder, b.p_zeta_star) == pytest.approx(worst, abs=1e-15)
        assert worst <= 0.5 + 1e-12


class TestValidate:
    def test_flags_misalignment(self):
        b = build_scheme_from_marginal(Pmf([0.7, 0.3]), 0.8, 2)
        r = validate(b)
        assert r.beta_exact == pytest.approx([0.3, 0.4])
        assert r.aligned_message_ok
        assert r.max_exceeds_beta_star
        assert r.converse_ok and r.marginals_ok and r.false_alarm_ok
        assert not r.ok
        js = r.to_json()
        assert js["gap_to_beta_star"] == pytest.approx(0.1)
        assert js["schema_version"] == "1"

    def test_clean_bundle(self):
        b = build_finite_scheme(SchemeParams(Pmf([0.3, 0.25, 0.25, 0.2]), 4, 2, 8, 0.2))
        r = validate(b)
        assert r.ok
        assert max(r.beta_exact) == pytest.approx(r.beta_star, abs=1e-10)


class TestMonteCarlo:
    b = build_scheme_from_marginal(Pmf([0.7, 0.3]), 0.8, 2)

    def test_reproducible(self):
        cfg = SimConfig(trials=40000, seed=9)
        r1, r2 = monte_carlo(self.b, cfg), monte_carlo(self.b, cfg)
        assert r1 == r2
        assert r1.to_json() == r2.to_json()
        assert "wall_clock_s" not in r1.to_json()

    def test_seed_changes_draws(self):
        r1 = monte_carlo(self.b, SimConfig(trials=5000, seed=1))
        r2 = monte_carlo(self.b, SimConfig(trials=5000, seed=2))
        assert r1.message_errors != r2.message_errors

    def test_consistent_with_exact(self):
        r = monte_carlo(self.b, SimConfig(trials=100_000, seed=0))
        for (lo, hi), beta in zip(r.beta_ci, exact_errors(self.b)):
            assert lo <= beta <= hi
        # under the source law, a false alarm happens iff the decoded message is nonzero
        assert r.false_alarm_ci[0] <= 0.7 * 0.4 + 0.3 * 0.3 + 0.7 * 0.3 + 0.3 * 0.4 <= r.false_alarm_ci[1]

    def test_worst_case_h0(self):
        r = monte_carlo(self.b, SimConfig(trials=50_000, seed=4, h0_source="worst-case"))
        lo, hi = r.false_alarm_ci
        assert lo <= r.false_alarm_worst_case <= hi

    def test_rejects_zero_trials(self):
        with pytest.raises(ValueError):
            SimConfig(trials=0)


class TestOracle:
    def test_tight_on_misaligned_instance(self):
        r = brute_force_minmax(Pmf([0.7, 0.3]), 0.8, 2, 1 / 40)
        assert r.value == pytest.approx(0.3, abs=1e-12)
        assert r.value >= r.beta_star - 3 * r.grid_step
        np.testing.assert_allclose(r.best_p_zeta, [0.4, 0.4, 0.2], atol=1e-12)

    def test_three_symbols(self):
        r = brute_force_minmax(Pmf([0.5, 0.3, 0.2]), 0.5, 2, 1 / 20)
        assert r.value == pytest.approx(0.3, abs=1e-12)
        assert r.value >= r.beta_star - 4 * r.grid_step

    def test_single_message(self):
        r = brute_force_minmax(Pmf([0.6, 0.4]), 0.3, 1, 1 / 20)
        assert r.value >= r.beta_star - 3 * r.grid_step

    @pytest.mark.parametrize("kw", [dict(m=3), dict(grid_step=0.3)])
    def test_rejects(self, kw):
        args = dict(p_x=Pmf([0.5, 0.5]), alpha=0.5, m=2, grid_step=0.1) | kw
        with pytest.raises(ValueError):
            brute_force_minmax(**args)

    def test_gap_analysis(self):
        b = build_scheme_from_marginal(Pmf([0.7, 0.3]), 0.8, 2)
        assert_converse(b)
        g = gap_analysis(validate(b), brute_force_minmax(Pmf([0.7, 0.3]), 0.8, 2, 1 / 40))
        assert g["construction_gap"] == pytest.approx(0.1)
        assert abs(g["oracle_gap"]) < 1e-12
        assert "another auxiliary law" in g["verdict"]


class TestExponent:
    family = IidFamily([[0.5, 0.0, 0.0, 0.5], [0.25, 0.25, 0.25, 0.25]])

    def test_bound(self):
        assert self.family.m == 1
        r = empirical_exponent(self.family, [4, 6, 8], 1, SimConfig(trials=50_000, seed=1))
        assert r.bound == pytest.approx(math.log(2))
        assert r.status == "ok"
        assert 0.5 < r.slope < r.bound + 3 * r.slope_se

    def test_error_probability_matches_binomial(self):
        # the LLR of P_0 against P_1 is finite only when every symbol is on the
        # diagonal (prob 2^-T); it then equals T ln 2 = T*D with zero variance
        T, trials = 6, 200_000
        exact = 2.0**-T
        err = self.family.error_rate(1, T, trials, __import__("dembed").RngSeed(0))
        assert abs(err / trials - exact) < 4 * math.sqrt(exact * (1 - exact) / trials)

    def test_censored(self):
        fam = IidFamily([[0.999, 0.001], [0.001, 0.999]])
        r = empirical_exponent(fam, [60, 80], 1, SimConfig(trials=100, seed=0))
        assert r.status == "censored" and r.slope is None
