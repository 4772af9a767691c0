import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spdpotts.diagnostics import (
    DifferenceMap,
    credible_interval,
    difference_map,
    heidelberger_welch,
    marginal_mixture_weights,
    rand_index,
    _cvm_sf,
)
from spdpotts.errors import ChainTooShort, EmptyChain, EmptyTrace, LengthMismatch
from spdpotts.potts import PottsHyper


class _FakeTrace:
    def __init__(self, agree_rows):
        self.agree = np.asarray(agree_rows, dtype=bool)
        self.n_retained = self.agree.shape[0]

    def prob_diff(self):
        return 1.0 - self.agree.mean(axis=0)


class TestDifferenceMap:
    def test_all_agree(self):
        dm = difference_map(_FakeTrace(np.ones((100, 3))))
        assert np.all(dm.prob_diff == 0.0)
        assert not dm.decision.any()

    def test_counting(self):
        rows = np.ones((1000, 1), dtype=bool)
        rows[:600, 0] = False  # 600 of 1000 iterations differ
        dm = difference_map(_FakeTrace(rows))
        assert dm.prob_diff[0] == pytest.approx(0.6)
        assert dm.decision[0]

    def test_exact_tie_is_not_flagged(self):
        rows = np.ones((10, 1), dtype=bool)
        rows[:5, 0] = False
        dm = difference_map(_FakeTrace(rows))
        assert dm.prob_diff[0] == 0.5
        assert not dm.decision[0]

    def test_threshold_monotone(self):
        rng = np.random.default_rng(0)
        trace = _FakeTrace(rng.random((200, 50)) < 0.4)
        loose = difference_map(trace, threshold=0.5)
        strict = difference_map(trace, threshold=0.9)
        assert np.all(strict.decision <= loose.decision)

    def test_empty(self):
        with pytest.raises(EmptyTrace):
            difference_map(_FakeTrace(np.ones((0, 3))))

    def test_consistency_enforced(self):
        with pytest.raises(ValueError):
            DifferenceMap(np.array([0.9]), np.array([False]), 0.5)


class TestMarginalWeights:
    def test_uniform_when_flat(self):
        w = marginal_mixture_weights(2, PottsHyper(0.0, 1.0, 0.0), 4)
        assert np.allclose(w, 0.25)

    def test_direct_evaluation(self):
        w = marginal_mixture_weights(1, PottsHyper(np.log(3.0), 0.0, 0.0), 2)
        assert np.allclose(w, [0.75, 0.25], atol=1e-12)

    @given(st.integers(0, 10_000))
    def test_normalized(self, seed):
        rng = np.random.default_rng(seed)
        K = int(rng.integers(2, 12))
        theta = PottsHyper(rng.uniform(0, 20), rng.uniform(0, 20), rng.uniform(0, 1))
        w = marginal_mixture_weights(int(rng.integers(1, K + 1)), theta, K)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(w >= 0)

    def test_bad_label(self):
        with pytest.raises(ValueError):
            marginal_mixture_weights(5, PottsHyper(0, 0, 0), 4)


class TestHeidelbergerWelch:
    def test_cvm_distribution_constants(self):
        # classical critical values of the limiting distribution
        assert _cvm_sf(0.46136) == pytest.approx(0.05, abs=2e-3)
        assert _cvm_sf(0.34730) == pytest.approx(0.10, abs=2e-3)
        assert _cvm_sf(0.74346) == pytest.approx(0.01, abs=1e-3)

    def test_constant_chain_passes(self):
        res = heidelberger_welch(np.full(500, 3.25))
        assert res.passed and res.retained_start == 0

    def test_iid_chain_passes_mostly(self):
        rng = np.random.default_rng(1)
        passes = sum(
            heidelberger_welch(rng.standard_normal(2000)).passed for _ in range(100)
        )
        assert passes >= 94

    def test_trended_chain_fails_mostly(self):
        rng = np.random.default_rng(2)
        t = np.arange(2000)
        fails = sum(
            not heidelberger_welch(rng.standard_normal(2000) + 0.001 * t).passed
            for _ in range(100)
        )
        assert fails >= 90

    def test_affine_invariance(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(1500) + np.linspace(0, 1.5, 1500)
        base = heidelberger_welch(x)
        shifted = heidelberger_welch(7.0 - 3.5 * x)
        assert base == shifted

    def test_too_short(self):
        with pytest.raises(ChainTooShort):
            heidelberger_welch(np.zeros(50))

    def test_burnin_drop_recovers(self):
        # stationary after an initial transient: passes with a later start
        rng = np.random.default_rng(4)
        x = rng.standard_normal(4000)
        x[:400] += np.linspace(8.0, 0.0, 400)
        res = heidelberger_welch(x)
        assert res.passed
        assert res.retained_start >= 400


def _brute_rand(a, b):
    agree = 0
    n = len(a)
    for i, j in itertools.combinations(range(n), 2):
        same_a = a[i] == a[j]
        same_b = b[i] == b[j]
        agree += same_a == same_b
    return agree / (n * (n - 1) / 2)


class TestRandIndex:
    def test_identical(self):
        assert rand_index([1, 2, 2, 3], [1, 2, 2, 3]) == 1.0

    def test_known_value(self):
        assert rand_index([1, 1, 2, 2], [1, 2, 1, 2]) == pytest.approx(1.0 / 3.0)
        assert _brute_rand([1, 1, 2, 2], [1, 2, 1, 2]) == pytest.approx(1.0 / 3.0)

    def test_permutation_invariance(self):
        a = [1, 1, 2, 3, 3, 3]
        remap = {1: 9, 2: 4, 3: 7}
        assert rand_index(a, [remap[v] for v in a]) == 1.0

    @given(st.integers(0, 10_000), st.integers(2, 30))
    def test_brute_force_oracle(self, seed, n):
        rng = np.random.default_rng(seed)
        a = rng.integers(0, 4, size=n)
        b = rng.integers(0, 3, size=n)
        got = rand_index(a, b)
        assert got == pytest.approx(_brute_rand(a.tolist(), b.tolist()), abs=1e-12)
        assert 0.0 <= got <= 1.0
        assert got == rand_index(b, a)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            rand_index([1, 2], [1, 2, 3])


class TestCredibleInterval:
    def test_constant(self):
        ci = credible_interval(np.full(10, 2.5))
        assert ci == (2.5, 2.5)

    def test_linear_interpolation_convention(self):
        ci = credible_interval(np.arange(1, 101, dtype=float), level=0.9)
        assert ci.lo == pytest.approx(5.95)
        assert ci.hi == pytest.approx(95.05)

    def test_uniform_large_sample(self):
        rng = np.random.default_rng(5)
        ci = credible_interval(rng.random(100_000), level=0.95)
        assert ci.lo == pytest.approx(0.025, abs=0.01)
        assert ci.hi == pytest.approx(0.975, abs=0.01)

    def test_empty(self):
        with pytest.raises(EmptyChain):
            credible_interval([])
