import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dembed.greenred import (
    GreenRedParams,
    detect_z,
    detection_rate,
    distortion_of,
    generate,
    generate_batch,
    green_counts,
    green_mask,
    mask_table,
    splitmix64,
    tilt,
    z_threshold,
)
from dembed.prob import Pmf, RngSeed, kl_divergence


def test_splitmix_reference_vector():
    # first outputs of the reference generator started from state 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert splitmix64(0x9E3779B97F4A7C15) == 0x6E789E6AA1B965F4


class TestParams:
    @pytest.mark.parametrize("V,rho", [(10, 0.25), (4, 0.0), (4, 1.0)])
    def test_rejects(self, V, rho):
        with pytest.raises(ValueError):
            GreenRedParams(V, rho, 1.0)

    def test_green_size(self):
        assert GreenRedParams(12, 1 / 3, 1.0).green_size == 4


class TestMasks:
    def test_sizes_and_determinism(self):
        p = GreenRedParams(32, 0.25, 1.0, key=5)
        t = mask_table(p)
        assert (t.sum(axis=1) == 8).all()
        np.testing.assert_array_equal(green_mask(3, p), t[3])
        assert not np.array_equal(mask_table(GreenRedParams(32, 0.25, 1.0, key=6)), t)

    def test_roughly_uniform_membership(self):
        # each token should be green for about half of the 256 contexts
        counts = mask_table(GreenRedParams(256, 0.5, 1.0, key=1)).sum(axis=0)
        chi2 = float(((counts - 128.0) ** 2 / 64.0).sum())
        assert abs(chi2 - 256) < 5 * math.sqrt(2 * 256)


class TestTilt:
    def test_example(self):
        # V = 2, uniform, delta = ln 2: tilted law (2/3, 1/3)
        out = tilt(Pmf([0.5, 0.5]), [1, 0], math.log(2))
        np.testing.assert_allclose(out.probs, [2 / 3, 1 / 3])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.01, 1), min_size=2, max_size=8), st.floats(0, 5), st.data())
    def test_green_mass_increases(self, w, delta, data):
        q = Pmf(np.array(w) / sum(w))
        mask = np.array(data.draw(st.lists(st.integers(0, 1), min_size=len(w), max_size=len(w))))
        out = tilt(q, mask, delta)
        assert out.probs[mask == 1].sum() >= q.probs[mask == 1].sum() - 1e-12


class TestGeneration:
    p = GreenRedParams(16, 0.5, 2.0, key=42)
    q = Pmf.uniform(16)

    def test_reproducible(self):
        a = generate(self.q, 50, self.p, RngSeed(1).generator())
        b = generate(self.q, 50, self.p, RngSeed(1).generator())
        assert a == b and len(a) == 50

    def test_transition_frequencies(self):
        # oracle: empirical next-token frequencies against the tilted law for that context
        toks = generate_batch(self.q, 2, self.p, RngSeed(2).generator(), 100_000)
        first = toks[:, 0]
        expected = tilt(self.q, mask_table(self.p)[0], self.p.delta).probs
        freq = np.bincount(first, minlength=16) / first.size
        np.testing.assert_allclose(freq, expected, atol=5 * math.sqrt(0.25 / first.size))

    def test_green_counts_by_hand(self):
        toks = [3, 7, 7, 0]
        t = mask_table(self.p)
        prev = [0, 3, 7, 7]
        assert green_counts(np.array([toks]), self.p)[0] == sum(t[a, b] for a, b in zip(prev, toks))


class TestDetection:
    def test_threshold(self):
        assert z_threshold(0.05) == pytest.approx(1.6448536269514722, abs=1e-12)

    def test_detects_strong_watermark(self):
        p = GreenRedParams(16, 0.5, 4.0, key=3)
        toks = generate(Pmf.uniform(16), 200, p, RngSeed(0).generator())
        r = detect_z(toks, p, 0.05)
        assert r["detected"] and r["T"] == 200

    def test_short_input(self):
        with pytest.raises(ValueError):
            detect_z([1], GreenRedParams(4, 0.5, 1.0))

    def test_false_alarm_rate(self):
        p = GreenRedParams(16, 0.5, 0.0, key=7)
        rate = detection_rate(Pmf.uniform(16), 100, p, 0.05, 10_000, seed=3)
        assert 0.03 <= rate <= 0.07


class TestDistortion:
    def test_zero_delta(self):
        assert distortion_of(Pmf([0.7, 0.2, 0.1]), GreenRedParams(3, 1 / 3, 0.0)) == 0.0

    def test_binary_example(self):
        # either mask gives tilted law (2/3, 1/3) or its mirror; KL(tilt || q) = ln 2 - H(2/3, 1/3)
        expected = math.log(2) - (-(2 / 3) * math.log(2 / 3) - (1 / 3) * math.log(1 / 3))
        got = distortion_of(Pmf([0.5, 0.5]), GreenRedParams(2, 0.5, math.log(2)))
        assert got == pytest.approx(expected, abs=1e-15)
        assert got == pytest.approx(0.056633012265132426, abs=1e-15)

    def test_exact_enumeration(self):
        q = Pmf([0.5, 0.3, 0.2])
        p = GreenRedParams(3, 1 / 3, 1.0)
        masks = np.eye(3, dtype=int)
        expected = np.mean([kl_divergence(tilt(q, m, 1.0), q) for m in masks])
        assert distortion_of(q, p) == pytest.approx(expected, abs=1e-15)

    def test_monotone(self):
        q = Pmf([0.7, 0.2, 0.1])
        vals = [distortion_of(q, GreenRedParams(3, 1 / 3, d)) for d in (0, 0.5, 1, 2, 4)]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_monte_carlo_path(self):
        q = Pmf(np.linspace(1, 2, 12) / np.linspace(1, 2, 12).sum())
        p = GreenRedParams(12, 0.5, 1.0)
        exact = distortion_of(q, p)
        approx = distortion_of(q, p, max_exact=10, mc_masks=4000)
        assert approx == pytest.approx(exact, rel=0.05)
