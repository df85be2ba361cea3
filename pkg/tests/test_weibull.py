import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from osreval.weibull import (
    WeibullFitError,
    WeibullModel,
    fit_weibull_tail,
    sample_weibull,
    weibull_cdf,
    weibull_mle,
)


def loglik(x, lam, kappa):
    return np.sum(stats.weibull_min.logpdf(x, kappa, scale=lam))


class TestCdf:
    def test_at_shift_is_zero(self):
        m = WeibullModel(tau=1.5, lam=2.0, kappa=3.0, tail_size=10)
        assert weibull_cdf(m, 1.5) == 0.0
        assert weibull_cdf(m, -4.0) == 0.0

    def test_exponential_case(self):
        m = WeibullModel(0.0, 2.0, 1.0, 2)
        assert weibull_cdf(m, 2.0) == pytest.approx(1 - math.exp(-1), abs=1e-15)
        assert weibull_cdf(m, 2.0) == pytest.approx(0.632121, abs=1e-6)

    def test_inverted_quartile(self):
        m = WeibullModel(0.0, 1.0, 2.0, 2)
        d = optimize.brentq(lambda x: 1 - math.exp(-x * x) - 0.75, 0.1, 5.0, xtol=1e-14)
        assert d == pytest.approx(1.17741, abs=1e-5)
        assert weibull_cdf(m, d) == pytest.approx(0.75, abs=1e-12)
        assert weibull_cdf(m, 1.17741) == pytest.approx(0.75, abs=1e-5)

    def test_vectorised(self):
        m = WeibullModel(0.0, 1.0, 2.0, 2)
        out = m.cdf(np.array([-1.0, 0.0, 1.0]))
        np.testing.assert_allclose(out, [0.0, 0.0, 1 - math.exp(-1)])

    @settings(max_examples=100, deadline=None)
    @given(tau=st.floats(-10, 10), lam=st.floats(1e-3, 1e3), kappa=st.floats(0.05, 50))
    def test_monotone_and_bounded(self, tau, lam, kappa):
        m = WeibullModel(tau, lam, kappa, 2)
        grid = np.sort(np.concatenate([np.linspace(tau - 5, tau + 20 * lam, 400), [tau, np.inf]]))
        c = m.cdf(grid)
        assert np.all(np.diff(c) >= 0)
        assert np.all((c >= 0) & (c <= 1))
        assert c[-1] == 1.0

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            WeibullModel(0.0, 0.0, 1.0, 5)
        with pytest.raises(ValueError):
            WeibullModel(0.0, 1.0, -1.0, 5)
        with pytest.raises(ValueError):
            WeibullModel(0.0, 1.0, 1.0, 1)


class TestMle:
    @pytest.mark.parametrize("lam,kappa", [(1.0, 0.8), (1.0, 2.0), (3.0, 5.0), (0.01, 12.0), (500.0, 0.4)])
    def test_beats_or_matches_scipy(self, lam, kappa):
        x = lam * np.random.default_rng(7).weibull(kappa, 2000)
        lam_hat, k_hat = weibull_mle(x)
        c, _, scale = stats.weibull_min.fit(x, floc=0)
        assert k_hat == pytest.approx(c, rel=1e-3)
        assert lam_hat == pytest.approx(scale, rel=1e-3)
        # a maximiser cannot lose to another candidate
        assert loglik(x, lam_hat, k_hat) >= loglik(x, scale, c) - 1e-7

    def test_score_equations_vanish(self):
        x = 2.0 * np.random.default_rng(1).weibull(1.7, 500)
        lam, k = weibull_mle(x)
        h = 1e-6
        for dl, dk in ((h, 0), (0, h)):
            grad = (loglik(x, lam + dl, k + dk) - loglik(x, lam - dl, k - dk)) / (2 * h)
            assert abs(grad) < 1e-3

    def test_rejects_nonpositive(self):
        with pytest.raises(WeibullFitError):
            weibull_mle([0.0, 1.0, 2.0])
        with pytest.raises(WeibullFitError, match="degenerate"):
            weibull_mle([2.0, 2.0, 2.0])


class TestFitTail:
    def test_recovery_5000(self):
        x = np.random.default_rng(0).weibull(2.0, 5000)
        m = fit_weibull_tail(x, 5000)
        assert 0.95 <= m.lam <= 1.05
        assert 1.9 <= m.kappa <= 2.1
        assert m.tail_size == 5000

    def test_degenerate_tail(self):
        with pytest.raises(WeibullFitError, match="degenerate"):
            fit_weibull_tail([1.0] * 30, 20)

    def test_too_few(self):
        with pytest.raises(WeibullFitError, match="need 20"):
            fit_weibull_tail(np.arange(10.0), 20)
        m = fit_weibull_tail(np.arange(10.0), 20, clamp_tail=True)
        assert m.tail_size == 10

    def test_bad_input(self):
        with pytest.raises(WeibullFitError):
            fit_weibull_tail([1.0, -2.0, 3.0], 2)
        with pytest.raises(WeibullFitError):
            fit_weibull_tail([1.0, np.nan, 3.0], 2)
        with pytest.raises(WeibullFitError):
            fit_weibull_tail([1.0, 2.0, 3.0], 1)

    def test_tail_extraction(self):
        rng = np.random.default_rng(3)
        mixed = np.concatenate([rng.uniform(0, 1, 300), 2 + rng.weibull(1.5, 60)])
        rng.shuffle(mixed)
        tail = sorted(mixed.tolist())[-40:]
        assert fit_weibull_tail(mixed, 40) == fit_weibull_tail(tail, 40)

    def test_shift_margin(self):
        m = fit_weibull_tail([5.0, 6.0, 7.0, 9.0], 3)
        assert m.tau == pytest.approx(6.0 - 6e-6, abs=1e-12)
        assert m.cdf(6.0) > 0

    def test_ties_kept(self):
        # the duplicated 4.0 takes two tail slots
        a = fit_weibull_tail([1.0, 4.0, 4.0, 5.0], 3)
        b = fit_weibull_tail([4.0, 4.0, 5.0], 3)
        assert a == b

    def test_round_trip_dict(self):
        m = fit_weibull_tail(np.random.default_rng(2).weibull(2.0, 100), 20)
        assert WeibullModel.from_dict(m.to_dict()) == m
        assert set(m.to_dict()) == {"tau", "lambda", "kappa", "tail_size"}

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31), c=st.floats(1e-3, 1e3), n=st.integers(5, 200),
           kappa=st.floats(0.3, 8))
    def test_scale_equivariance(self, seed, c, n, kappa):
        d = np.random.default_rng(seed).weibull(kappa, n)
        tail = max(2, n // 2)
        try:
            base = fit_weibull_tail(d, tail)
        except WeibullFitError:
            return
        scaled = fit_weibull_tail(c * d, tail)
        assert scaled.tau == pytest.approx(c * base.tau, rel=1e-6, abs=1e-300)
        assert scaled.lam == pytest.approx(c * base.lam, rel=1e-6)
        assert scaled.kappa == pytest.approx(base.kappa, rel=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31), n=st.integers(3, 100))
    def test_permutation_invariance(self, seed, n):
        rng = np.random.default_rng(seed)
        d = rng.gamma(2.0, size=n)
        tail = max(2, n // 3)
        assert fit_weibull_tail(d, tail) == fit_weibull_tail(rng.permutation(d), tail)


class TestSample:
    def test_deterministic(self):
        m = WeibullModel(0.5, 2.0, 1.5, 10)
        np.testing.assert_array_equal(sample_weibull(m, 100, 9), sample_weibull(m, 100, 9))
        assert not np.array_equal(sample_weibull(m, 100, 9), sample_weibull(m, 100, 10))

    def test_strictly_above_shift(self):
        m = WeibullModel(0.0, 1.0, 3.0, 10)
        assert np.all(sample_weibull(m, 100_000, 0) > 0.0)
        m = WeibullModel(2.0, 1.0, 1.0, 10)
        assert np.all(sample_weibull(m, 100_000, 0) > 2.0)

    @pytest.mark.parametrize("tau,lam,kappa", [(0.0, 1.0, 2.0), (1.0, 3.0, 0.7), (-2.0, 0.5, 6.0)])
    def test_empirical_cdf(self, tau, lam, kappa):
        m = WeibullModel(tau, lam, kappa, 10)
        x = np.sort(sample_weibull(m, 100_000, 4))
        n = len(x)
        exact = 1 - np.exp(-(((x - tau) / lam) ** kappa))
        sup = max(np.max(np.arange(1, n + 1) / n - exact), np.max(exact - np.arange(n) / n))
        assert sup < 0.01

    def test_fit_sample_round_trip(self):
        m = WeibullModel(0.0, 2.5, 1.3, 10)
        fit = fit_weibull_tail(sample_weibull(m, 10_000, 5), 10_000)
        assert fit.lam == pytest.approx(2.5, rel=0.05)
        assert fit.kappa == pytest.approx(1.3, rel=0.05)
