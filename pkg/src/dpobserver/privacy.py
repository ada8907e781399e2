"""Adjacency relation, sensitivity bounds, and calibrated noise mechanisms.

The adjacency relation protects transient input deviations that start at some
step k0 with magnitude at most K and then decay geometrically at rate alpha.
Sensitivities of the identity map and of a contracting observer follow in
closed form; Laplace and Gaussian mechanisms are calibrated from them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import ONE, TWO, NormTag, SpdMat

__all__ = [
    "AdjacencyParams",
    "PrivacyBudget",
    "SensitivityBound",
    "NoiseCalibration",
    "q_function",
    "q_inverse",
    "kappa",
    "identity_sensitivity",
    "observer_l1_sensitivity",
    "observer_l2_sensitivity",
    "gaussian_series_factor",
    "calibrate_laplace",
    "calibrate_gaussian",
    "sample_noise",
    "squaring_bias_demo",
]


@dataclass(frozen=True)
class AdjacencyParams:
    """Adjacent input pair envelope: |y_k - y~_k| <= K * alpha^(k - k0)."""

    K: float
    alpha: float
    input_norm: NormTag = TWO

    def __post_init__(self):
        if not (self.K > 0):
            raise ValueError("K must be > 0")
        if not (0.0 <= self.alpha < 1.0):
            raise ValueError("alpha must lie in [0, 1)")


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ValueError("epsilon must be > 0")
        if not (0.0 <= self.delta <= 0.5):
            raise ValueError("delta must lie in [0, 0.5]")


@dataclass(frozen=True)
class SensitivityBound:
    """Worst-case l_p output deviation over all adjacent input pairs."""

    p: int
    value: float
    gamma: float | None = None
    rho: float | None = None

    def __post_init__(self):
        if self.p not in (1, 2):
            raise ValueError("p must be 1 or 2")
        if self.value < 0:
            raise ValueError("sensitivity must be >= 0")


@dataclass(frozen=True)
class NoiseCalibration:
    """Calibrated output noise: Laplace(b) per coordinate, or Gaussian with
    covariance sigma^2 * shape^-1 published as xi = D^-1 zeta, D = sqrt(shape)."""

    kind: str  # "laplace" | "gaussian"
    b: float | None = None
    sigma: float | None = None
    shape: SpdMat | None = field(default=None, compare=False)
    epsilon: float | None = None
    delta: float | None = None
    gamma: float | None = None
    rho: float | None = None
    sensitivity: float | None = None

    def __post_init__(self):
        if self.kind == "laplace":
            if self.b is None or self.b <= 0:
                raise ValueError("Laplace calibration needs b > 0")
        elif self.kind == "gaussian":
            if self.sigma is None or self.sigma <= 0:
                raise ValueError("Gaussian calibration needs sigma > 0")
        else:
            raise ValueError(f"unknown mechanism kind {self.kind!r}")

    def covariance(self) -> np.ndarray:
        if self.kind != "gaussian":
            raise ValueError("covariance defined for the Gaussian mechanism only")
        shape = self.shape if self.shape is not None else SpdMat(np.eye(1))
        return self.sigma**2 * shape.inverse()

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.b is not None:
            d["b"] = self.b
        if self.sigma is not None:
            d["sigma"] = self.sigma
        if self.shape is not None:
            d["shape"] = self.shape.entries.tolist()
        for k in ("epsilon", "delta", "gamma", "rho", "sensitivity"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        return d


def q_function(x: float) -> float:
    """Standard Gaussian upper tail probability P(N(0,1) > x)."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def q_inverse(delta: float, tol: float = 1e-13, max_iter: int = 200) -> float:
    """Inverse of q_function by bisection on [-10, 10]."""
    if not (0.0 < delta < 1.0):
        raise ValueError("q_inverse requires delta in (0, 1)")
    lo, hi = -10.0, 10.0
    if q_function(lo) < delta or q_function(hi) > delta:
        raise ValueError("delta outside the bisection bracket")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = q_function(mid)
        if val == delta:
            return mid
        if val > delta:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def kappa(budget: PrivacyBudget) -> float:
    """Gaussian mechanism constant (Qinv(delta) + sqrt(Qinv(delta)^2 + 2 eps)) / (2 eps)."""
    if budget.delta <= 0.0:
        raise ValueError("kappa undefined at delta = 0; use the Laplace mechanism")
    k = q_inverse(budget.delta)
    return (k + math.sqrt(k * k + 2.0 * budget.epsilon)) / (2.0 * budget.epsilon)


def identity_sensitivity(adj: AdjacencyParams, p: int) -> SensitivityBound:
    """Sensitivity of the identity map: K/(1-alpha) for p=1, K/sqrt(1-alpha^2) for p=2.

    The closed forms assume the input norm matches p (1-norm with p=1,
    2-norm with p=2); mismatched pairings are rejected.
    """
    if p == 1:
        if adj.input_norm.kind != "one":
            raise ValueError("p=1 identity sensitivity requires the 1-norm on inputs")
        return SensitivityBound(1, adj.K / (1.0 - adj.alpha))
    if p == 2:
        if adj.input_norm.kind != "two":
            raise ValueError("p=2 identity sensitivity requires the 2-norm on inputs")
        return SensitivityBound(2, adj.K / math.sqrt(1.0 - adj.alpha**2))
    raise ValueError("p must be 1 or 2")


def _coupling_rate(k_coupling: float, alpha: float, beta: float, rho: float) -> float:
    if not (0.0 <= alpha < 1.0):
        raise ValueError("alpha must lie in [0, 1)")
    if not (0.0 <= beta < 1.0):
        raise ValueError("beta must lie in [0, 1)")
    if not (rho > 0):
        raise ValueError("rho must be > 0")
    if k_coupling < 0:
        raise ValueError("coupling gain must be >= 0")
    gamma = max(alpha + k_coupling / rho, beta)
    if gamma >= 1.0:
        raise ValueError(
            f"combined rate gamma = {gamma:.6g} >= 1; increase rho or reduce the gain"
        )
    return gamma


def observer_l1_sensitivity(
    k_coupling: float, alpha: float, beta: float, rho: float
) -> SensitivityBound:
    """l1 sensitivity of a contracting observer driven by an adjacent pair.

    The per-step gap is bounded by rho * (gamma^j - alpha^j) with
    gamma = max(alpha + K'/rho, beta); summing the geometric series gives
    Delta_1 = rho * (1/(1-gamma) - 1/(1-alpha)).
    """
    gamma = _coupling_rate(k_coupling, alpha, beta, rho)
    value = rho * (1.0 / (1.0 - gamma) - 1.0 / (1.0 - alpha))
    return SensitivityBound(1, value, gamma=gamma, rho=rho)


def gaussian_series_factor(gamma: float, alpha: float) -> float:
    """B = sqrt(sum_k (gamma^k - alpha^k)^2) in closed form.

    B^2 = 1/(1-gamma^2) - 2/(1-gamma*alpha) + 1/(1-alpha^2), and
    B <= 1/sqrt(1-gamma^2).
    """
    if not (0.0 <= alpha < 1.0 and 0.0 <= gamma < 1.0):
        raise ValueError("rates must lie in [0, 1)")
    b2 = (
        1.0 / (1.0 - gamma * gamma)
        - 2.0 / (1.0 - gamma * alpha)
        + 1.0 / (1.0 - alpha * alpha)
    )
    return math.sqrt(max(b2, 0.0))


def observer_l2_sensitivity(
    k_coupling: float, alpha: float, beta: float, rho: float
) -> SensitivityBound:
    """l2 sensitivity Delta_2 = rho * B of a contracting observer."""
    gamma = _coupling_rate(k_coupling, alpha, beta, rho)
    return SensitivityBound(2, rho * gaussian_series_factor(gamma, alpha), gamma=gamma, rho=rho)


def calibrate_laplace(delta1: SensitivityBound, budget: PrivacyBudget) -> NoiseCalibration:
    """Laplace parameter b = Delta_1 / epsilon for a pure epsilon guarantee."""
    if delta1.p != 1:
        raise ValueError("Laplace calibration needs an l1 sensitivity")
    if budget.delta != 0.0:
        raise ValueError("Laplace mechanism gives delta = 0; use calibrate_gaussian")
    if delta1.value <= 0.0:
        raise ValueError(
            "zero sensitivity: publishing unperturbed output is not differentially "
            "private; refusing to return zero noise"
        )
    return NoiseCalibration(
        kind="laplace",
        b=delta1.value / budget.epsilon,
        epsilon=budget.epsilon,
        delta=0.0,
        gamma=delta1.gamma,
        rho=delta1.rho,
        sensitivity=delta1.value,
    )


def calibrate_gaussian(
    delta2: SensitivityBound, budget: PrivacyBudget, shape: SpdMat
) -> NoiseCalibration:
    """Gaussian noise with covariance sigma^2 shape^-1, sigma = kappa * Delta_2.

    The published noise is xi_k = D^-1 zeta_k with zeta_k white N(0, sigma^2 I)
    and D the SPD square root of shape.
    """
    if delta2.p != 2:
        raise ValueError("Gaussian calibration needs an l2 sensitivity")
    if budget.delta <= 0.0:
        raise ValueError("Gaussian mechanism requires delta > 0")
    if delta2.value <= 0.0:
        raise ValueError(
            "zero sensitivity: publishing unperturbed output is not differentially "
            "private; refusing to return zero noise"
        )
    return NoiseCalibration(
        kind="gaussian",
        sigma=kappa(budget) * delta2.value,
        shape=shape,
        epsilon=budget.epsilon,
        delta=budget.delta,
        gamma=delta2.gamma,
        rho=delta2.rho,
        sensitivity=delta2.value,
    )


def _laplace_inverse_cdf(u: np.ndarray, b: float) -> np.ndarray:
    # u uniform in [-0.5, 0.5); clip keeps log argument positive at u = -0.5
    arg = np.clip(1.0 - 2.0 * np.abs(u), 1e-300, None)
    return -b * np.sign(u) * np.log(arg)


def sample_noise(
    cal: NoiseCalibration, dim: int, rng_seed: int, n_steps: int
) -> np.ndarray:
    """Seeded noise signal of shape (n_steps, dim) for the given calibration."""
    rng = np.random.default_rng(rng_seed)
    if cal.kind == "laplace":
        u = rng.random((n_steps, dim)) - 0.5
        return _laplace_inverse_cdf(u, cal.b)
    zeta = cal.sigma * rng.standard_normal((n_steps, dim))
    if cal.shape is None:
        return zeta
    if cal.shape.dim != dim:
        raise ValueError(f"shape dim {cal.shape.dim} != requested dim {dim}")
    return zeta @ cal.shape.sqrt_inv()


def squaring_bias_demo(K: float, y, rng_seed: int, n_trials: int) -> float:
    """Empirical bias of squaring an input perturbed by K * standard normal noise.

    Returns the mean over trials and time of (y + K xi)^2 - y^2, which
    converges to K^2.
    """
    if K < 0:
        raise ValueError("K must be >= 0")
    if K == 0.0:
        return 0.0
    y = np.asarray(y, dtype=float).reshape(-1)
    rng = np.random.default_rng(rng_seed)
    total = 0.0
    count = 0
    chunk = max(1, min(n_trials, 10**6 // max(1, y.size)))
    done = 0
    while done < n_trials:
        m = min(chunk, n_trials - done)
        xi = rng.standard_normal((m, y.size))
        e = (y[None, :] + K * xi) ** 2 - y[None, :] ** 2
        total += float(e.sum())
        count += e.size
        done += m
    return total / count
