"""Concrete models and the observer simulator.

Two desk-scale examples are wired end to end: a scalar link-probability
channel (logit-linear dynamics with a logistic observation) and a sampled
two-compartment epidemic model measured through the infectious fraction.
Both feed the generic corrected-prediction recursion

    z_{k+1} = f(z_k, k) + L_k (y_k - g(z_k, k))

and publish privatized estimates z_k + xi_k with noise calibrated from the
contraction analysis.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .contraction import (
    DomainBox,
    JacobianField,
    observer_coupling_gain,
    verify_contraction,
)
from .linalg import TWO, NormTag, SpdMat, weighted
from .privacy import (
    AdjacencyParams,
    NoiseCalibration,
    PrivacyBudget,
    calibrate_gaussian,
    calibrate_laplace,
    observer_l1_sensitivity,
    observer_l2_sensitivity,
    sample_noise,
)

__all__ = [
    "ObserverSpec",
    "BlockmodelParams",
    "SirParams",
    "Trajectory",
    "DomainExitWarning",
    "logistic",
    "logit",
    "theta_estimate",
    "simulate",
    "generate_synthetic",
    "adjacent_pair",
    "blockmodel_gain_window",
    "blockmodel_calibrate",
    "blockmodel_observer_spec",
    "sir_jacobian",
    "sir_synthesis_samples",
    "sir_pipeline",
]


class DomainExitWarning(UserWarning):
    """A simulated state left the certified domain; the certificate is void
    for that run."""


def logistic(z):
    z = np.asarray(z, dtype=float)
    return 1.0 / (1.0 + np.exp(-z))


def logit(theta):
    theta = np.asarray(theta, dtype=float)
    return np.log(theta / (1.0 - theta))


def theta_estimate(z):
    """Map a logit-scale estimate signal to probabilities in (0, 1)."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("estimate signal has non-finite entries")
    return logistic(z)


@dataclass(frozen=True)
class ObserverSpec:
    """Dynamics f(x, k), observation g(x, k), gain (matrix or schedule)."""

    f: object
    g: object
    gain: object
    domain: DomainBox
    initial_estimate: np.ndarray

    def __post_init__(self):
        z0 = np.asarray(self.initial_estimate, dtype=float).reshape(-1)
        if not self.domain.contains(z0):
            raise ValueError("initial estimate lies outside the domain")
        object.__setattr__(self, "initial_estimate", z0)

    def gain_at(self, k: int) -> np.ndarray:
        if callable(self.gain):
            return np.atleast_2d(np.asarray(self.gain(k), dtype=float))
        if isinstance(self.gain, (list, tuple)):
            return np.atleast_2d(np.asarray(self.gain[k], dtype=float))
        return np.atleast_2d(np.asarray(self.gain, dtype=float))


@dataclass(frozen=True)
class BlockmodelParams:
    """Scalar logit channel: psi' = f*psi + w, y = logistic(psi) + v."""

    f: float = 0.95
    l: float = 0.3
    a: float = float(np.log(19.0))  # logit(0.95); domain psi in [-a, a]
    sigma_w: float = 0.05
    sigma_v: float = 0.01

    def __post_init__(self):
        if self.f <= 0:
            raise ValueError("dynamics coefficient f must be > 0")
        if self.a <= 0:
            raise ValueError("logit half-range a must be > 0")
        if self.sigma_w < 0 or self.sigma_v < 0:
            raise ValueError("noise levels must be >= 0")

    @property
    def b_low(self) -> float:
        """Minimum of the logistic derivative on [-a, a] (attained at the ends)."""
        e = math.exp(-self.a)
        return e / (1.0 + e) ** 2

    @property
    def beta(self) -> float:
        """Certified contraction rate f - b_low * l of the observer map."""
        return self.f - self.b_low * self.l

    def domain(self) -> DomainBox:
        return DomainBox((-self.a,), (self.a,))

    def observer_jacobian(self) -> JacobianField:
        def jac(x, k):
            e = math.exp(-float(x[0]))
            return np.array([[self.f - self.l * e / (1.0 + e) ** 2]])

        return JacobianField(jac, dim=1)


@dataclass(frozen=True)
class SirParams:
    """Sampled epidemic model on (s, i) with measurement y = i + v."""

    mu: float = 0.1
    r0: float = 3.0
    tau: float = 0.1
    sigma_v: float = 0.02
    sigma_w: float | None = None  # defaults to 0.01 * tau

    def __post_init__(self):
        if min(self.mu, self.r0, self.tau) <= 0:
            raise ValueError("mu, r0, tau must all be > 0")
        if self.sigma_w is None:
            object.__setattr__(self, "sigma_w", 0.01 * self.tau)
        # one-step map must keep the certified region inside the simplex
        for s, i in ((0.99, 0.01), (0.5, 0.5), (0.0, 0.5), (0.95, 0.05)):
            s2, i2 = self.step(np.array([s, i]))
            if not (s2 >= -1e-9 and i2 >= -1e-9 and s2 + i2 <= 1.0 + 1e-9):
                raise ValueError(
                    "tau*mu*r0 too large: the grid domain does not map into the simplex"
                )

    def step(self, x):
        s, i = float(x[0]), float(x[1])
        a = self.tau * self.mu
        return np.array([s - a * self.r0 * i * s, i + a * i * (self.r0 * s - 1.0)])

    def observe(self, x):
        return np.array([float(x[1])])

    def domain(self) -> DomainBox:
        return DomainBox(
            (0.0, 0.01), (1.0, 0.5), cut_rows=((1.0, 1.0),), cut_bounds=(1.0,)
        )


def sir_jacobian(params: SirParams) -> JacobianField:
    a = params.tau * params.mu * params.r0

    def jac(x, k):
        s, i = float(x[0]), float(x[1])
        return np.eye(2) + a * np.array([[-i, -s], [i, s - 1.0 / params.r0]])

    return JacobianField(jac, dim=2)


def sir_synthesis_samples(params: SirParams, grid_step: float = 0.01) -> list:
    """Jacobian samples over the certification region, grid multiples included."""
    jac = sir_jacobian(params)
    return [jac(x) for x in params.domain().grid(grid_step)]


@dataclass
class Trajectory:
    """Aligned per-step records; z/zhat stay None until an observer runs."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray | None = None
    zhat: np.ndarray | None = None
    seed: int | None = None
    exits: tuple = ()
    k0: int | None = None
    delta: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("state and measurement records must have equal length")
        for name in ("z", "zhat"):
            v = getattr(self, name)
            if v is not None:
                v = np.atleast_2d(np.asarray(v, dtype=float))
                if v.shape[0] != self.x.shape[0]:
                    raise ValueError(f"{name} length mismatch")
                setattr(self, name, v)

    @property
    def n_steps(self) -> int:
        return self.x.shape[0]


def simulate(spec: ObserverSpec, y, n_steps: int):
    """Run the observer recursion; returns (z, exit_steps).

    States are never clamped to the domain; steps where the estimate leaves
    it are recorded (and reported once as a DomainExitWarning) because they
    void any certificate conditioned on that domain.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.shape[0] < n_steps:
        raise ValueError("measurement signal shorter than n_steps")
    dim = spec.initial_estimate.shape[0]
    z = np.empty((n_steps, dim))
    z[0] = spec.initial_estimate
    exits = []
    for k in range(n_steps - 1):
        zk = z[k]
        innov = y[k] - np.atleast_1d(np.asarray(spec.g(zk, k), dtype=float))
        znext = np.atleast_1d(np.asarray(spec.f(zk, k), dtype=float)) + spec.gain_at(k) @ innov
        if not np.all(np.isfinite(znext)):
            raise FloatingPointError(f"non-finite observer state at step {k + 1}")
        z[k + 1] = znext
        if not spec.domain.contains(znext):
            exits.append(k + 1)
    if exits:
        warnings.warn(
            f"observer state left the certified domain at {len(exits)} step(s), "
            f"first at k={exits[0]}; certificate void for this run",
            DomainExitWarning,
            stacklevel=2,
        )
    return z, tuple(exits)


def generate_synthetic(model, x0, n_steps: int, seed: int) -> Trajectory:
    """Simulate the ground-truth model with seeded Gaussian noise."""
    rng = np.random.default_rng(seed)
    if isinstance(model, BlockmodelParams):
        x = np.empty((n_steps, 1))
        y = np.empty((n_steps, 1))
        psi = float(np.asarray(x0).reshape(-1)[0])
        for k in range(n_steps):
            x[k, 0] = psi
            y[k, 0] = float(logistic(psi)) + model.sigma_v * rng.standard_normal()
            psi = model.f * psi + model.sigma_w * rng.standard_normal()
        return Trajectory(x=x, y=y, seed=seed)
    if isinstance(model, SirParams):
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        if x0.shape != (2,):
            raise ValueError("SIR state is (s, i)")
        if not (x0[0] >= 0 and x0[1] >= 0 and x0.sum() <= 1.0):
            raise ValueError("initial state outside the simplex")
        x = np.empty((n_steps, 2))
        y = np.empty((n_steps, 1))
        state = x0.copy()
        for k in range(n_steps):
            x[k] = state
            y[k, 0] = state[1] + model.sigma_v * rng.standard_normal()
            state = model.step(state) + model.sigma_w * rng.standard_normal(2)
        return Trajectory(x=x, y=y, seed=seed)
    raise TypeError(f"unknown model type {type(model).__name__}")


def adjacent_pair(y, adj: AdjacencyParams, k0: int, seed: int, worst_case: bool = False):
    """Perturbed copy of y differing from step k0 on, inside the adjacency envelope.

    Random variant draws signed magnitudes up to the envelope; the worst-case
    variant applies the full envelope with a fixed positive direction.
    Returns (y_tilde, delta).
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n, m = y.shape
    if not (0 <= k0 < n):
        raise ValueError("k0 must index into the signal")
    rng = np.random.default_rng(seed)
    delta = np.zeros_like(y)
    for k in range(k0, n):
        envelope = adj.K * adj.alpha ** (k - k0)
        if worst_case:
            direction = np.ones(m)
            scale = 1.0
        else:
            direction = rng.standard_normal(m)
            scale = float(rng.uniform(0.0, 1.0))
        norm = _tag_norm(direction, adj.input_norm)
        if norm == 0.0:
            continue
        delta[k] = envelope * scale * direction / norm
    return y + delta, delta


def _tag_norm(v: np.ndarray, tag: NormTag) -> float:
    from .linalg import vec_norm

    return vec_norm(v, tag)


def blockmodel_gain_window(f: float, beta: float, a: float):
    """Admissible gain interval (l_min, l_max) for the scalar observer."""
    if min(f, beta, a) <= 0:
        raise ValueError("f, beta, a must be > 0")
    e = math.exp(-a)
    b_low = e / (1.0 + e) ** 2
    l_min = (f - beta) / b_low if f > beta else 0.0
    return l_min, 4.0 * (f + beta)


def blockmodel_calibrate(
    params: BlockmodelParams,
    adj: AdjacencyParams,
    budget: PrivacyBudget,
    grid_step: float = 0.01,
    rho: float | None = None,
):
    """Laplace calibration for the scalar channel, certificate included.

    beta = f - b_low(a) * l, K' = K * l, and by default rho = K'/(beta - alpha)
    so the combined rate equals beta.
    """
    l_min, l_max = blockmodel_gain_window(params.f, params.beta, params.a)
    if not (l_min - 1e-12 <= params.l <= l_max + 1e-12):
        raise ValueError(
            f"gain l={params.l} outside the admissible window [{l_min:.4g}, {l_max:.4g}]"
        )
    beta = params.beta
    if not (0.0 <= beta < 1.0):
        raise ValueError(f"certified rate beta={beta:.4g} outside [0, 1)")
    k_prime = observer_coupling_gain(np.array([[params.l]]), TWO, adj.input_norm, adj.K)
    if rho is None:
        if beta <= adj.alpha:
            raise ValueError(
                "beta <= alpha: the default rho = K'/(beta - alpha) is undefined; "
                "pass rho explicitly"
            )
        rho = k_prime / (beta - adj.alpha)
    sens = observer_l1_sensitivity(k_prime, adj.alpha, beta, rho)
    cal = calibrate_laplace(sens, budget)
    cert = verify_contraction(
        params.observer_jacobian(), params.domain(), TWO, beta, grid_step
    )
    return cal, cert


def blockmodel_observer_spec(params: BlockmodelParams) -> ObserverSpec:
    return ObserverSpec(
        f=lambda x, k: np.array([params.f * float(x[0])]),
        g=lambda x, k: np.array([float(logistic(float(x[0])))]),
        gain=np.array([[params.l]]),
        domain=params.domain(),
        initial_estimate=np.zeros(1),
    )


def sir_pipeline(
    params: SirParams,
    synth,
    adj: AdjacencyParams,
    budget: PrivacyBudget | None,
    seed: int,
    n_steps: int = 600,
    x0=(0.9, 0.05),
    initial_estimate=(0.5, 0.25),
    no_model_noise: bool = False,
):
    """Full private-estimation run: truth, measurements, observer, noise.

    The synthesized LMI family certifies the multiplier beta, so the rate
    entering the sensitivity formulas is the norm bound sqrt(beta); with the
    default rho the combined rate gamma equals it.  Passing budget=None skips
    privatization (testing sentinel; the published output is then just z).
    """
    if not synth.converged:
        raise ValueError("synthesis result did not converge; refusing to calibrate")
    model = params if not no_model_noise else SirParams(
        mu=params.mu, r0=params.r0, tau=params.tau, sigma_v=0.0, sigma_w=0.0
    )
    truth = generate_synthetic(model, x0, n_steps, seed)
    spec = ObserverSpec(
        f=lambda x, k: model.step(x),
        g=lambda x, k: model.observe(x),
        gain=synth.L,
        domain=params.domain(),
        initial_estimate=np.asarray(initial_estimate, dtype=float),
    )
    z, exits = simulate(spec, truth.y, n_steps)

    meta = {"synthesis": synth.to_dict()}
    if budget is None:
        zhat = z.copy()
        cal = None
    else:
        state_norm = weighted(synth.P)
        k_prime = observer_coupling_gain(synth.L, state_norm, adj.input_norm, adj.K)
        beta_norm = math.sqrt(synth.beta)
        if beta_norm <= adj.alpha:
            raise ValueError("certified rate does not dominate the adjacency decay")
        rho = k_prime / (beta_norm - adj.alpha)
        sens = observer_l2_sensitivity(k_prime, adj.alpha, beta_norm, rho)
        cal = calibrate_gaussian(sens, budget, synth.P)
        xi = sample_noise(cal, 2, rng_seed=seed + 1, n_steps=n_steps)
        zhat = z + xi
        meta["calibration"] = cal.to_dict()
        meta["k_prime"] = k_prime
        meta["beta_norm"] = beta_norm
    return Trajectory(
        x=truth.x, y=truth.y, z=z, zhat=zhat, seed=seed, exits=exits, meta=meta
    )

