import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from tailopt.market import (
    KernelQuantile,
    MarketParams,
    Orientation,
    e_gamma,
    kernel_quantile,
    load_market,
    log_kernel_quantile,
    p_density,
    q_density,
    q_integral,
    q_power_integral,
)


def bs_log_q(theta: float, T: float):
    """Reference decreasing kernel quantile, for wrapping as a custom kernel."""
    c = abs(theta) * math.sqrt(T)
    return lambda x: -0.5 * c * c - c * norm.ppf(x)


class TestDensities:
    def test_p_density_peak_when_drift_cancels(self):
        # mu = sigma^2/2 and s0 = 0 puts the P-mean at 0
        m = MarketParams(mu=0.02, r=0.0, sigma=0.2, T=1.0, s0=0.0)
        assert p_density(m, 0.0) == pytest.approx(1.0 / (0.2 * math.sqrt(2 * math.pi)), rel=1e-14)

    @given(st.floats(min_value=-3.0, max_value=3.0))
    def test_p_density_symmetric_about_mean(self, d):
        m = MarketParams(mu=0.07, r=0.02, sigma=0.2, T=1.0, s0=0.1)
        mean = m.p_mean()
        assert p_density(m, mean + d) == pytest.approx(p_density(m, mean - d), rel=1e-12)

    def test_p_density_matches_normal_pdf(self, ref_market):
        expected = norm.pdf(0.05, loc=ref_market.p_mean(), scale=ref_market.sd())
        assert p_density(ref_market, 0.05) == pytest.approx(expected, rel=1e-13)

    def test_q_density_is_p_density_with_r_drift(self, ref_market):
        expected = norm.pdf(0.05, loc=ref_market.q_mean(), scale=ref_market.sd())
        assert q_density(ref_market, 0.05) == pytest.approx(expected, rel=1e-13)
        m_flat = MarketParams(mu=0.02, r=0.02, sigma=0.2, T=1.0)
        for x in (-0.5, 0.0, 0.3):
            assert q_density(m_flat, x) == p_density(m_flat, x)

    def test_q_density_normalizes(self, ref_market):
        val, _ = quad(lambda x: q_density(ref_market, x), -np.inf, np.inf)
        assert abs(val - 1.0) < 1e-8


class TestKernelQuantile:
    def test_unit_value_where_exponent_vanishes(self, ref_kernel, ref_market):
        x = norm.cdf(-ref_market.theta * math.sqrt(ref_market.T) / 2.0)
        assert kernel_quantile(ref_kernel, x) == pytest.approx(1.0, abs=1e-14)

    def test_flat_kernel_when_mu_equals_r(self):
        k = KernelQuantile.from_market(MarketParams(0.02, 0.02, 0.2, 1.0))
        for x in (1e-8, 0.3, 0.999):
            assert kernel_quantile(k, x) == 1.0

    def test_formula_value(self):
        # theta = 0.25, T = 1, x = 0.01
        k = KernelQuantile.from_market(MarketParams(0.07, 0.02, 0.2, 1.0))
        expected = math.exp(0.25 * (-0.125 - norm.ppf(0.01)))
        assert kernel_quantile(k, 0.01) == pytest.approx(expected, rel=1e-14)

    def test_consistency_with_density_ratio(self, ref_kernel, ref_market, rng):
        # q(x) = (q_density/p_density)(F^{-1}_{s_T}(x)) for mu > r
        for x in rng.uniform(1e-6, 1 - 1e-6, size=1000):
            s = ref_market.p_mean() + ref_market.sd() * norm.ppf(x)
            ratio = q_density(ref_market, s) / p_density(ref_market, s)
            assert kernel_quantile(ref_kernel, x) == pytest.approx(ratio, rel=1e-10)

    def test_reversed_orientation_when_mu_below_r(self, rng):
        m = MarketParams(mu=-0.03, r=0.02, sigma=0.2, T=1.0)
        k = KernelQuantile.from_market(m)
        assert k.orientation is Orientation.INCREASING_IN_U
        # density ratio is increasing in U; the library re-indexes x -> 1-x
        for x in rng.uniform(1e-6, 1 - 1e-6, size=200):
            s = m.p_mean() + m.sd() * norm.ppf(1.0 - x)
            ratio = q_density(m, s) / p_density(m, s)
            assert kernel_quantile(k, x) == pytest.approx(ratio, rel=1e-10)

    def test_monotone_decreasing_on_grid(self, ref_kernel):
        xs = np.linspace(1e-6, 1 - 1e-6, 1000)
        vals = [kernel_quantile(ref_kernel, x) for x in xs]
        assert all(b <= a for a, b in zip(vals, vals[1:]))

    def test_log_space_evaluation_far_in_the_tail(self, ref_kernel):
        lq = log_kernel_quantile(ref_kernel, 1e-300)
        assert math.isfinite(lq)
        assert math.exp(lq) == pytest.approx(kernel_quantile(ref_kernel, 1e-300))

    def test_domain_errors(self, ref_kernel):
        for bad in (0.0, 1.0, -0.5, 2.0):
            with pytest.raises(ValueError):
                kernel_quantile(ref_kernel, bad)


class TestQIntegral:
    def test_normalization(self, ref_kernel):
        assert q_integral(ref_kernel, 0.0, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_empty_interval(self, ref_kernel):
        assert q_integral(ref_kernel, 0.3, 0.3) == 0.0

    def test_against_quadrature(self, ref_kernel):
        val, _ = quad(lambda x: kernel_quantile(ref_kernel, x), 1e-14, 0.05, limit=500)
        assert q_integral(ref_kernel, 0.0, 0.05) == pytest.approx(val, rel=1e-8)

    def test_rejects_reversed_bounds(self, ref_kernel):
        with pytest.raises(ValueError):
            q_integral(ref_kernel, 0.6, 0.4)


class TestQPowerIntegral:
    def test_flat_kernel_gives_interval_length(self):
        k = KernelQuantile.from_market(MarketParams(0.02, 0.02, 0.2, 1.0))
        assert q_power_integral(k, 2.0, 0.2, 0.7) == pytest.approx(0.5, abs=1e-12)

    def test_full_interval_equals_e_gamma(self, ref_kernel):
        for g in (1.5, 2.0, 0.5):
            assert q_power_integral(ref_kernel, g, 0.0, 1.0) == pytest.approx(
                e_gamma(ref_kernel, g), rel=1e-12
            )

    def test_against_quadrature(self, ref_kernel):
        beta = 2.0  # gamma_R = 2
        val, _ = quad(
            lambda x: kernel_quantile(ref_kernel, x) ** beta, 1e-14, 0.3, limit=500
        )
        assert q_power_integral(ref_kernel, 2.0, 0.0, 0.3) == pytest.approx(val, rel=1e-6)

    def test_random_parameters_match_quadrature(self, rng):
        for _ in range(25):
            theta = rng.uniform(-1.0, 1.0)
            T = rng.uniform(0.1, 5.0)
            g = rng.uniform(1.1, 10.0) if rng.random() < 0.5 else rng.uniform(0.05, 0.95)
            a, b = sorted(rng.uniform(0.0, 1.0, size=2))
            if b - a < 1e-3:
                continue
            k = KernelQuantile.from_market(MarketParams(theta * 0.2 + 0.02, 0.02, 0.2, T))
            beta = g / (g - 1.0)
            val, _ = quad(
                lambda x: math.exp(beta * log_kernel_quantile(k, x)),
                max(a, 1e-14),
                min(b, 1 - 1e-14),
                limit=500,
            )
            assert q_power_integral(k, g, a, b) == pytest.approx(val, rel=1e-6)

    def test_gamma_one_rejected(self, ref_kernel):
        with pytest.raises(ValueError):
            q_power_integral(ref_kernel, 1.0, 0.0, 0.5)


class TestEGamma:
    def test_flat_market(self):
        k = KernelQuantile.from_market(MarketParams(0.02, 0.02, 0.2, 1.0))
        assert e_gamma(k, 3.0) == 1.0

    def test_large_gamma_limit(self, ref_kernel):
        assert e_gamma(ref_kernel, 1e8) == pytest.approx(1.0, abs=1e-8)

    def test_reference_value(self, ref_kernel):
        # lognormal moment identity: E[Z^a] = exp(a(a-1) theta^2 T / 2), a = 2
        assert e_gamma(ref_kernel, 2.0) == pytest.approx(math.exp(0.0625), rel=1e-14)

    def test_against_quantile_quadrature(self, ref_kernel):
        val, _ = quad(
            lambda x: math.exp(2.0 * log_kernel_quantile(ref_kernel, x)),
            1e-14,
            1 - 1e-14,
            limit=500,
        )
        assert e_gamma(ref_kernel, 2.0) == pytest.approx(val, rel=1e-8)

    def test_gamma_one_rejected(self, ref_kernel):
        with pytest.raises(ValueError):
            e_gamma(ref_kernel, 1.0)

    def test_always_finite_for_bs_kernel(self, rng):
        for _ in range(50):
            m = MarketParams(rng.uniform(-0.2, 0.3), 0.02, rng.uniform(0.05, 0.5), rng.uniform(0.1, 5.0))
            g = rng.uniform(1.01, 50.0)
            assert math.isfinite(e_gamma(KernelQuantile.from_market(m), g))


class TestCustomKernel:
    def test_quadrature_path_matches_closed_forms(self, ref_market, ref_kernel):
        generic = KernelQuantile.from_quantile(
            ref_market, bs_log_q(ref_market.theta, ref_market.T)
        )
        assert q_integral(generic, 0.0, 1.0) == pytest.approx(1.0, abs=1e-8)
        assert q_integral(generic, 0.0, 0.05) == pytest.approx(
            q_integral(ref_kernel, 0.0, 0.05), rel=1e-8
        )
        assert q_power_integral(generic, 2.0, 0.0, 0.3) == pytest.approx(
            q_power_integral(ref_kernel, 2.0, 0.0, 0.3), rel=1e-6
        )
        assert e_gamma(generic, 2.0) == pytest.approx(e_gamma(ref_kernel, 2.0), rel=1e-6)

    def test_divergence_is_signalled(self, ref_market):
        # q(x) = x^{-1/2}/2 integrates to 1 but its square diverges
        heavy = KernelQuantile.from_quantile(
            ref_market, lambda x: -0.5 * math.log(x) - math.log(2.0)
        )
        assert q_integral(heavy, 0.0, 1.0) == pytest.approx(1.0, rel=1e-7)
        assert q_power_integral(heavy, 2.0, 0.0, 1.0) == math.inf


class TestMarketParams:
    def test_invariants(self):
        with pytest.raises(ValueError):
            MarketParams(0.07, 0.02, -0.2, 1.0)
        with pytest.raises(ValueError):
            MarketParams(0.07, 0.02, 0.2, 0.0)

    def test_theta(self, ref_market):
        assert ref_market.theta == pytest.approx(0.25)

    def test_load_market(self, tmp_path):
        path = tmp_path / "market.toml"
        path.write_text("mu = 0.07\nr = 0.02\nsigma = 0.2\nT = 1.0\ns0 = 0.3\n")
        m = load_market(path)
        assert m == MarketParams(0.07, 0.02, 0.2, 1.0, 0.3)

    def test_load_market_missing_key(self, tmp_path):
        path = tmp_path / "market.toml"
        path.write_text("mu = 0.07\nr = 0.02\n")
        with pytest.raises(ValueError, match="missing"):
            load_market(path)


@settings(max_examples=30, deadline=None)
@given(
    theta=st.floats(min_value=-1.0, max_value=1.0),
    T=st.floats(min_value=0.1, max_value=5.0),
)
def test_normalization_property(theta, T):
    m = MarketParams(mu=0.02 + theta * 0.2, r=0.02, sigma=0.2, T=T)
    k = KernelQuantile.from_market(m)
    assert abs(q_integral(k, 0.0, 1.0) - 1.0) < 1e-8
