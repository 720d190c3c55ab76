import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from urgan.ggd import (
    GGDDomainError,
    GGDParams,
    ggd_pdf,
    ggd_sample,
    ggd_variance,
    nll_grad,
    nll_term,
)

# 40-digit mpmath evaluations of the closed forms, frozen
PDF_AT_1_3 = 0.06297505965516454743  # eps=1.3, alpha=0.7, beta=1.5
NLL_UNIT_GAUSS = 1.5723649429247000871  # 1 + log(sqrt(pi))


def gaussian_nll(x_hat, x, sigma):
    return 0.5 * ((x_hat - x) / sigma) ** 2 + np.log(sigma * np.sqrt(2 * np.pi))


def mp_nll(x_hat, x, alpha, beta):
    eps, a, b = mp.mpf(x_hat) - mp.mpf(x), mp.mpf(alpha), mp.mpf(beta)
    return (abs(eps) / a) ** b - mp.log(b / (2 * a)) + mp.loggamma(1 / b)


def mp_central_diff(f, args, i, h=1e-6):
    with mp.workdps(40):
        hi = list(map(mp.mpf, args))
        lo = list(hi)
        hi[i] += h
        lo[i] -= h
        return float((f(*hi) - f(*lo)) / (2 * h))


class TestParams:
    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            GGDParams(alpha=0.0)
        with pytest.raises(ValueError):
            GGDParams(beta=-1.0)

    def test_rejects_large_shape(self):
        with pytest.raises(ValueError):
            GGDParams(beta=8.5)
        GGDParams(beta=8.0)


class TestPdf:
    def test_laplace_peak(self):
        assert ggd_pdf(0.0, GGDParams(0, 1, 1)) == pytest.approx(0.5, abs=1e-15)

    def test_gaussian_peak(self):
        assert ggd_pdf(0.0, GGDParams(0, 1, 2)) == pytest.approx(1 / math.sqrt(math.pi), abs=1e-15)

    def test_against_mpmath(self):
        assert ggd_pdf(1.3, GGDParams(0, 0.7, 1.5)) == pytest.approx(PDF_AT_1_3, abs=1e-10)

    def test_non_finite_eps(self):
        with pytest.raises(ValueError):
            ggd_pdf(np.nan, GGDParams())

    @pytest.mark.parametrize("beta", [0.8, 1.0, 1.5, 2.0, 4.0, 8.0])
    @pytest.mark.parametrize("alpha", [0.3, 1.0, 2.5])
    def test_normalization(self, alpha, beta):
        p = GGDParams(mu=0.4, alpha=alpha, beta=beta)
        lo, hi = p.mu - 50 * alpha, p.mu + 50 * alpha
        val, _ = integrate.quad(lambda t: ggd_pdf(t, p), lo, hi, points=[p.mu], limit=500, epsabs=1e-13, epsrel=1e-13)
        assert val == pytest.approx(1.0, abs=1e-8)


class TestNll:
    def test_zero_residual_laplace(self):
        assert nll_term(0.3, 0.3, 1.0, 1.0) == pytest.approx(math.log(2), abs=1e-15)

    def test_unit_residual_gaussian(self):
        assert nll_term(1.0, 0.0, 1.0, 2.0) == pytest.approx(NLL_UNIT_GAUSS, abs=1e-14)

    @given(
        st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 5),
    )
    def test_gaussian_reduction(self, x_hat, x, sigma):
        got = nll_term(x_hat, x, sigma * math.sqrt(2), 2.0)
        want = gaussian_nll(x_hat, x, sigma)
        assert abs(got - want) <= 1e-12 * max(1.0, abs(want))

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 5))
    def test_laplace_reduction(self, x_hat, x, alpha):
        got = nll_term(x_hat, x, alpha, 1.0)
        want = abs(x_hat - x) / alpha + math.log(2 * alpha)
        assert abs(got - want) <= 1e-12 * max(1.0, abs(want))

    @given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 3), st.floats(0.3, 8))
    @settings(max_examples=50)
    def test_matches_mpmath(self, x_hat, x, alpha, beta):
        want = float(mp_nll(x_hat, x, alpha, beta))
        assert nll_term(x_hat, x, alpha, beta) == pytest.approx(want, rel=1e-12, abs=1e-12)

    def test_vectorized(self):
        rng = np.random.default_rng(3)
        xh, x = rng.normal(size=50), rng.normal(size=50)
        a, b = rng.uniform(0.2, 2, 50), rng.uniform(0.5, 4, 50)
        vec = nll_term(xh, x, a, b)
        loop = [nll_term(*args) for args in zip(xh, x, a, b)]
        np.testing.assert_allclose(vec, loop, rtol=0, atol=0)

    @pytest.mark.parametrize("alpha,beta", [(0, 1), (-1, 1), (1, 0), (1, -2)])
    def test_invalid(self, alpha, beta):
        with pytest.raises(ValueError):
            nll_term(0.0, 1.0, alpha, beta)


class TestGrad:
    def test_symmetric_minimum(self):
        assert nll_grad(0.5, 0.5, 1.0, 2.0)[0] == 0.0

    def test_square(self):
        assert nll_grad(1.0, 0.0, 1.0, 2.0)[0] == pytest.approx(2.0, abs=1e-15)

    def test_singular(self):
        with pytest.raises(GGDDomainError):
            nll_grad(1.0, 1.0, 1.0, 0.7)

    def test_zero_residual_beta_one_subgradient(self):
        d_xhat, d_alpha, _ = nll_grad(0.0, 0.0, 2.0, 1.0)
        assert d_xhat == 0.0
        assert d_alpha == pytest.approx(0.5)

    def test_finite_differences(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            eps = rng.uniform(0.1, 2) * rng.choice([-1, 1])
            alpha, beta = rng.uniform(0.5, 2), rng.uniform(0.8, 4)
            got = nll_grad(eps, 0.0, alpha, beta)
            args = (eps, 0.0, alpha, beta)
            for g, i in zip(got, (0, 2, 3)):
                fd = mp_central_diff(mp_nll, args, i)
                assert abs(g - fd) <= 1e-5 * abs(fd)


class TestVariance:
    def test_gaussian(self):
        assert ggd_variance(1.0, 2.0) == pytest.approx(0.5, rel=1e-14)

    def test_laplace(self):
        assert ggd_variance(1.0, 1.0) == pytest.approx(2.0, rel=1e-14)

    def test_monte_carlo(self):
        draws = ggd_sample(GGDParams(0, 0.5, 1.5), 10**6, seed=5)
        assert draws.var() == pytest.approx(ggd_variance(0.5, 1.5), rel=0.01)

    def test_large_shape_allowed(self):
        # the network's shape head is unbounded; ratio tends to 1/3
        assert ggd_variance(1.0, 200.0) == pytest.approx(1 / 3, rel=0.02)

    def test_invalid(self):
        with pytest.raises(ValueError):
            ggd_variance(0.0, 1.0)
        with pytest.raises(ValueError):
            ggd_variance(np.array([1.0, 1.0]), np.array([1.0, -1.0]))


class TestSample:
    def test_degenerate_scale(self):
        draws = ggd_sample(GGDParams(5.0, 1e-9, 2.0), 4, seed=0)
        assert np.all(np.abs(draws - 5.0) < 1e-6)

    def test_deterministic(self):
        p = GGDParams(0, 1, 1.2)
        np.testing.assert_array_equal(ggd_sample(p, 100, seed=9), ggd_sample(p, 100, seed=9))

    def test_gaussian_kurtosis(self):
        d = ggd_sample(GGDParams(0, 1, 2), 10**6, seed=1)
        d = d - d.mean()
        kurt = np.mean(d**4) / np.mean(d**2) ** 2
        assert kurt == pytest.approx(3.0, abs=0.05)

    def test_laplace_variance(self):
        d = ggd_sample(GGDParams(0, 0.7, 1.0), 10**6, seed=2)
        assert d.var() == pytest.approx(2 * 0.7**2, rel=0.01)

    def test_invalid_n(self):
        with pytest.raises(ValueError):
            ggd_sample(GGDParams(), 0)
