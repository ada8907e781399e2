import math

import numpy as np
import pytest

from dpobserver.linalg import ONE, TWO, SpdMat
from dpobserver.privacy import (
    AdjacencyParams,
    PrivacyBudget,
    SensitivityBound,
    calibrate_gaussian,
    calibrate_laplace,
    gaussian_series_factor,
    identity_sensitivity,
    kappa,
    observer_l1_sensitivity,
    observer_l2_sensitivity,
    q_function,
    q_inverse,
    sample_noise,
    squaring_bias_demo,
)


def bisect_q_inverse(delta, lo=-10.0, hi=10.0, iters=200):
    """Independent oracle: invert the Gaussian tail by plain bisection."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if q_function(mid) > delta:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestQFunction:
    def test_at_zero(self):
        assert q_function(0.0) == pytest.approx(0.5, abs=1e-15)

    def test_deep_tail(self):
        assert q_function(10.0) < 1e-20

    def test_standard_quantile(self):
        # oracle-inverted value for delta = 0.05
        x = bisect_q_inverse(0.05)
        assert x == pytest.approx(1.6448536269514722, abs=1e-9)
        assert q_function(x) == pytest.approx(0.05, abs=1e-12)

    def test_monotone_decreasing(self):
        xs = np.linspace(-6, 6, 200)
        vals = [q_function(x) for x in xs]
        assert all(a > b for a, b in zip(vals, vals[1:]))


class TestQInverse:
    def test_at_half(self):
        assert q_inverse(0.5) == pytest.approx(0.0, abs=1e-12)

    def test_at_005(self):
        assert q_inverse(0.05) == pytest.approx(1.6449, abs=1e-4)

    def test_round_trip(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            d = float(rng.uniform(0.001, 0.5))
            assert q_function(q_inverse(d)) == pytest.approx(d, abs=1e-12)

    def test_domain(self):
        for bad in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(ValueError):
                q_inverse(bad)


class TestKappa:
    def test_delta_half_closed_form(self):
        # Qinv(0.5) = 0 collapses kappa to 1/sqrt(2 eps)
        for eps in (0.5, 1.0, 2.0, 7.3):
            assert kappa(PrivacyBudget(eps, 0.5)) == pytest.approx(
                1.0 / math.sqrt(2.0 * eps), abs=1e-12
            )

    def test_paper_budget(self):
        assert kappa(PrivacyBudget(2.0, 0.05)) == pytest.approx(1.0586, abs=2e-4)

    def test_matches_independent_evaluation(self):
        eps, delta = 1.0, 0.05
        k = bisect_q_inverse(delta)
        expect = (k + math.sqrt(k * k + 2 * eps)) / (2 * eps)
        assert kappa(PrivacyBudget(eps, delta)) == pytest.approx(expect, abs=1e-9)

    def test_increases_as_delta_decreases(self):
        deltas = np.linspace(0.5, 0.001, 60)
        vals = [kappa(PrivacyBudget(1.0, float(d))) for d in deltas]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_delta_zero_rejected(self):
        with pytest.raises(ValueError):
            kappa(PrivacyBudget(1.0, 0.0))


class TestIdentitySensitivity:
    def test_single_step_deviation(self):
        assert identity_sensitivity(AdjacencyParams(1.0, 0.0, ONE), 1).value == 1.0
        assert identity_sensitivity(AdjacencyParams(1.0, 0.0, TWO), 2).value == 1.0

    def test_slow_decay_gap(self):
        d1 = identity_sensitivity(AdjacencyParams(1.0, 0.99, ONE), 1).value
        d2 = identity_sensitivity(AdjacencyParams(1.0, 0.99, TWO), 2).value
        assert d1 == pytest.approx(100.0, rel=1e-12)
        assert d2 == pytest.approx(1.0 / math.sqrt(1 - 0.99**2), rel=1e-12)
        assert d2 == pytest.approx(7.09, abs=5e-3)

    def test_mismatched_pairing_rejected(self):
        with pytest.raises(ValueError):
            identity_sensitivity(AdjacencyParams(1.0, 0.5, TWO), 1)
        with pytest.raises(ValueError):
            identity_sensitivity(AdjacencyParams(1.0, 0.5, ONE), 2)

    def test_l2_never_exceeds_l1(self):
        for alpha in np.linspace(0.0, 0.99, 100):
            d1 = identity_sensitivity(AdjacencyParams(1.0, float(alpha), ONE), 1).value
            d2 = identity_sensitivity(AdjacencyParams(1.0, float(alpha), TWO), 2).value
            assert d2 <= d1 + 1e-12


class TestObserverSensitivity:
    def test_blockmodel_reproduction(self):
        # f = 0.95, l = 0.3, theta-range [0.05, 0.95]: beta = 0.93575 exactly
        k_prime = 1e-3 * 0.3
        alpha, beta = 0.25, 0.95 - 0.0475 * 0.3
        rho = k_prime / (beta - alpha)
        s = observer_l1_sensitivity(k_prime, alpha, beta, rho)
        assert s.gamma == pytest.approx(beta, abs=1e-15)
        assert s.value == pytest.approx(6.23e-3, rel=1e-2)

    def test_hand_evaluated_case(self):
        s = observer_l1_sensitivity(0.1, 0.0, 0.5, 0.2)
        assert s.gamma == pytest.approx(0.5)
        assert s.value == pytest.approx(0.2, abs=1e-15)

    def test_zero_coupling(self):
        s = observer_l1_sensitivity(0.0, 0.25, 0.9, 0.7)
        assert s.gamma == pytest.approx(0.9)
        assert s.value == pytest.approx(0.7 * (10.0 - 1.0 / 0.75), rel=1e-12)

    def test_diverging_rate_rejected(self):
        with pytest.raises(ValueError):
            observer_l1_sensitivity(1.0, 0.5, 0.6, 1.0)  # gamma = 1.5

    def test_monotone_in_beta(self):
        # along the gain-window boundary l = (f - beta)/b_low the coupling
        # shrinks as beta rises toward f, and the sensitivity falls with it
        f, alpha, b_low, K = 0.95, 0.25, 0.0475, 1e-3
        vals = []
        for beta in np.linspace(alpha + 0.01, f - 1e-4, 200):
            l = (f - beta) / b_low
            k_prime = K * l
            rho = k_prime / (beta - alpha)
            vals.append(observer_l1_sensitivity(k_prime, alpha, float(beta), rho).value)
        assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))

    def test_l2_alpha_zero_collapse(self):
        s = observer_l2_sensitivity(0.2, 0.0, 0.5, 1.0)
        gamma = 0.5
        assert s.value == pytest.approx(gamma / math.sqrt(1 - gamma**2), rel=1e-12)

    def test_series_factor_vs_partial_sum(self):
        gamma, alpha = 0.9, 0.25
        partial = sum((gamma**k - alpha**k) ** 2 for k in range(10_001))
        assert gaussian_series_factor(gamma, alpha) == pytest.approx(
            math.sqrt(partial), abs=1e-10
        )

    def test_series_factor_upper_bound(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            alpha = float(rng.uniform(0.0, 0.98))
            gamma = float(rng.uniform(alpha, 0.995))
            assert gaussian_series_factor(gamma, alpha) <= 1.0 / math.sqrt(
                1 - gamma**2
            ) + 1e-12


class TestCalibration:
    def test_blockmodel_laplace(self):
        cal = calibrate_laplace(SensitivityBound(1, 6.23e-3), PrivacyBudget(1.0))
        assert cal.b == pytest.approx(6.23e-3)

    def test_direct_division(self):
        cal = calibrate_laplace(SensitivityBound(1, 1.0), PrivacyBudget(2.0))
        assert cal.b == pytest.approx(0.5)

    def test_zero_sensitivity_rejected(self):
        with pytest.raises(ValueError):
            calibrate_laplace(SensitivityBound(1, 0.0), PrivacyBudget(1.0))

    def test_laplace_needs_delta_zero(self):
        with pytest.raises(ValueError):
            calibrate_laplace(SensitivityBound(1, 1.0), PrivacyBudget(1.0, 0.05))

    def test_gaussian_sigma(self):
        cal = calibrate_gaussian(
            SensitivityBound(2, 1.0), PrivacyBudget(2.0, 0.5), SpdMat(np.eye(2))
        )
        assert cal.sigma == pytest.approx(0.5, abs=1e-12)

    def test_gaussian_needs_positive_delta(self):
        with pytest.raises(ValueError):
            calibrate_gaussian(SensitivityBound(2, 1.0), PrivacyBudget(1.0, 0.0), SpdMat(np.eye(2)))

    def test_covariance_reconstruction(self):
        shape = SpdMat([[2.0, 0.4], [0.4, 1.0]])
        cal = calibrate_gaussian(SensitivityBound(2, 0.7), PrivacyBudget(1.0, 0.1), shape)
        cov = cal.covariance()
        assert np.allclose(cov @ shape.entries, cal.sigma**2 * np.eye(2), atol=1e-12)

    def test_serialization_fields(self):
        cal = calibrate_laplace(
            SensitivityBound(1, 0.5, gamma=0.9, rho=0.01), PrivacyBudget(2.0)
        )
        d = cal.to_dict()
        assert d["kind"] == "laplace"
        assert d["b"] == pytest.approx(0.25)
        assert d["gamma"] == 0.9
        assert d["rho"] == 0.01
        assert d["sensitivity"] == 0.5
        assert d["epsilon"] == 2.0


class TestSampling:
    def test_laplace_variance(self):
        cal = calibrate_laplace(SensitivityBound(1, 1.0), PrivacyBudget(1.0))
        x = sample_noise(cal, 1, rng_seed=42, n_steps=10**6)
        assert float(x.var()) == pytest.approx(2.0, abs=0.02)

    def test_seed_determinism(self):
        cal = calibrate_laplace(SensitivityBound(1, 1.0), PrivacyBudget(1.0))
        a = sample_noise(cal, 3, rng_seed=7, n_steps=100)
        b = sample_noise(cal, 3, rng_seed=7, n_steps=100)
        assert np.array_equal(a, b)
        c = sample_noise(cal, 3, rng_seed=8, n_steps=100)
        assert not np.array_equal(a, c)

    def test_gaussian_empirical_covariance(self):
        shape = SpdMat([[2.0, -0.5], [-0.5, 1.5]])
        cal = calibrate_gaussian(SensitivityBound(2, 1.3), PrivacyBudget(1.0, 0.1), shape)
        x = sample_noise(cal, 2, rng_seed=11, n_steps=10**6)
        emp = (x.T @ x) / x.shape[0]
        target = cal.covariance()
        rel = np.linalg.norm(emp - target) / np.linalg.norm(target)
        assert rel < 0.02

    def test_laplace_ks_statistic(self):
        b = 0.8
        cal = calibrate_laplace(SensitivityBound(1, b), PrivacyBudget(1.0))
        n = 10**5
        x = np.sort(sample_noise(cal, 1, rng_seed=23, n_steps=n).ravel())
        cdf = np.where(x < 0, 0.5 * np.exp(x / b), 1.0 - 0.5 * np.exp(-x / b))
        i = np.arange(1, n + 1)
        d = max(float(np.max(i / n - cdf)), float(np.max(cdf - (i - 1) / n)))
        assert d < 1.628 / math.sqrt(n)  # 1% critical value

    def test_gaussian_ks_statistic(self):
        cal = calibrate_gaussian(
            SensitivityBound(2, 1.0), PrivacyBudget(1.0, 0.2), SpdMat(np.eye(1))
        )
        n = 10**5
        x = np.sort(sample_noise(cal, 1, rng_seed=29, n_steps=n).ravel())
        cdf = np.array([1.0 - q_function(v / cal.sigma) for v in x])
        i = np.arange(1, n + 1)
        d = max(float(np.max(i / n - cdf)), float(np.max(cdf - (i - 1) / n)))
        assert d < 1.628 / math.sqrt(n)


class TestSquaringBias:
    def test_zero_noise_exact(self):
        assert squaring_bias_demo(0.0, [1.0, 2.0], rng_seed=1, n_trials=10) == 0.0

    def test_half_k(self):
        bias = squaring_bias_demo(0.5, [0.0], rng_seed=3, n_trials=10**6)
        se = math.sqrt(2.0) * 0.25 / math.sqrt(10**6)  # std of K^2 xi^2 over n
        assert abs(bias - 0.25) < 3 * se
