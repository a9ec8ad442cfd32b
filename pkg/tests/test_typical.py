import itertools
import math
import random
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dembed.prob import Pmf, RngSeed, SequenceSpace, entropy
from dembed.typical import AsymptoticScheme, TypicalIndex, compositions, multinomial


def brute_typical(p, T, eta):
    """Typical sequences in lexicographic order by direct evaluation."""
    H = entropy(Pmf(p))
    out = []
    for seq in itertools.product(range(len(p)), repeat=T):
        if any(p[s] == 0 for s in seq):
            continue
        rate = -sum(math.log(p[s]) for s in seq) / T
        if abs(rate - H) <= eta + 1e-12:
            out.append(seq)
    return out


class TestCombinatorics:
    def test_compositions_count(self):
        assert len(list(compositions(6, 3))) == math.comb(8, 2)
        assert all(sum(c) == 6 for c in compositions(6, 3))

    def test_multinomial(self):
        assert multinomial((2, 1, 1)) == 12
        assert multinomial((0, 5)) == 1


class TestTypicalIndex:
    def test_uniform_all_typical(self):
        for T in (1, 4, 9):
            assert TypicalIndex(Pmf([0.5, 0.5]), T, 0.0).total_size == 2**T

    def test_frozen_example(self):
        # oracle: enumeration of all 1024 sequences; only 1^10 falls outside
        t = TypicalIndex(Pmf([0.7, 0.3]), 10)
        assert t.eta == pytest.approx(10**-0.25)
        assert t.total_size == 1023
        assert t.probability() == pytest.approx(1 - 0.3**10, abs=1e-15)

    @pytest.mark.parametrize(
        "p,T,eta",
        [((0.7, 0.3), 6, 0.2), ((0.5, 0.3, 0.2), 4, 0.15), ((0.6, 0.3, 0.1), 5, 0.3), ((0.8, 0.2), 9, None)],
    )
    def test_matches_brute_force(self, p, T, eta):
        t = TypicalIndex(Pmf(p), T, eta)
        seqs = brute_typical(p, T, t.eta)
        assert t.total_size == len(seqs)
        for r, seq in enumerate(seqs):
            assert t.rank(seq) == r
            assert t.unrank(r) == seq
        space = SequenceSpace(len(p), T)
        table = t.rank_table()
        assert [space.sequence(i) for i in np.flatnonzero(table >= 0)] == seqs

    def test_random_roundtrip_large(self):
        t = TypicalIndex(Pmf([0.6, 0.25, 0.15]), 40)
        rng = random.Random(0)
        assert t.total_size > 2**63
        for r in (rng.randrange(t.total_size) for _ in range(1000)):
            seq = t.unrank(r)
            assert t.contains(seq)
            assert t.rank(seq) == r

    def test_atypical_rank_rejected(self):
        t = TypicalIndex(Pmf([0.7, 0.3]), 10)
        with pytest.raises(ValueError):
            t.rank((1,) * 10)
        with pytest.raises(IndexError):
            t.unrank(1023)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0.05, 1.0), min_size=2, max_size=3), st.integers(1, 7), st.floats(0.0, 0.5))
    def test_indexed_sequences_typical(self, w, T, eta):
        p = Pmf(np.array(w) / sum(w))
        t = TypicalIndex(p, T, eta)
        H = entropy(p)
        for r in range(min(t.total_size, 50)):
            seq = t.unrank(r)
            rate = -sum(math.log(p.probs[s]) for s in seq) / T
            assert abs(rate - H) <= eta + 1e-9
            assert t.rank(seq) == r

    def test_typical_mass_grows(self):
        p = Pmf([0.7, 0.3])
        masses = [TypicalIndex(p, T).probability() for T in (8, 12, 16, 20)]
        assert all(m > 0.99 for m in masses)


class TestAsymptoticScheme:
    def test_uniform_source_exact_recovery(self):
        s = AsymptoticScheme(Pmf([0.5, 0.5]), 8, 1, 0.5)
        rng = RngSeed(0).generator()
        x, z = s.sample_pairs(np.ones(5000, dtype=np.int64), rng)
        assert (s.decode_many(x, z) == 1).all()

    def test_messages_roundtrip(self):
        s = AsymptoticScheme(Pmf([0.7, 0.3]), 12, 4, 0.1)
        rng = RngSeed(3).generator()
        msgs = rng.integers(1, 5, 20000)
        x, z = s.sample_pairs(msgs, rng)
        decoded = s.decode_many(x, z)
        typical = s._rank_many(x) >= 0
        assert (decoded[typical] == msgs[typical]).all()

    def test_slow_path_agrees(self, monkeypatch):
        fast = AsymptoticScheme(Pmf([0.7, 0.3]), 10, 2, 0.2)
        monkeypatch.setenv("DEMBED_MATERIALIZE_LIMIT", "16")
        slow = AsymptoticScheme(Pmf([0.7, 0.3]), 10, 2, 0.2)
        assert not slow.materialized and fast.materialized
        x = np.arange(0, 1024, 7)
        z = (x * 5 + 3) % 1024
        np.testing.assert_array_equal(fast.decode_many(x, z), slow.decode_many(x, z))
        r = np.arange(0, 1023, 11)
        np.testing.assert_array_equal(fast._unrank_many(r), slow._unrank_many(r))

    def test_rate_warning(self):
        with pytest.warns(UserWarning, match="rate condition"):
            s = AsymptoticScheme(Pmf([0.9, 0.1]), 2, 4, 0.01)
        assert not s.rate_ok

    def test_no_warning_when_rate_ok(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert AsymptoticScheme(Pmf([0.7, 0.3]), 16, 2, 0.1).rate_ok

    def test_worst_case_false_alarm(self):
        # brute force over every fixed x of P(decode != 0) with zeta ~ P_zeta
        s = AsymptoticScheme(Pmf([0.6, 0.4]), 6, 3, 0.2)
        pz = s.default_h0().probs
        z = np.arange(pz.size)
        worst = max(float(pz[s.decode_many(np.full(z.size, x), z) > 0].sum()) for x in range(64))
        assert s.worst_case_false_alarm() == pytest.approx(worst, abs=1e-14)
