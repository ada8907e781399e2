"""Grid-sampled contraction verification, cascade composition, and the
perturbed-trajectory divergence bound.

Certificates are sampled, not exhaustive: the domain is swept on a regular
grid (boundary points always included, where norm maxima often sit) and the
induced Jacobian norm is checked at every sample.  Certificates record the
grid step and sample count so the slack is auditable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import DEFAULT_TOL, NormTag, SpdMat, induced_norm, min_eig, vec_norm

__all__ = [
    "DomainBox",
    "JacobianField",
    "ContractionCertificate",
    "CascadeBound",
    "verify_contraction",
    "verify_contraction_lmi",
    "cascade_rate",
    "divergence_bound",
    "observer_coupling_gain",
]


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned box with optional linear cuts a @ x <= b (e.g. s + i <= 1)."""

    lower: tuple
    upper: tuple
    cut_rows: tuple = ()   # each row: coefficient tuple
    cut_bounds: tuple = ()

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower/upper must be 1-D and of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))) or not np.all(
            np.isfinite(hi - lo)
        ):
            raise ValueError("domain bounds must be finite with finite extent")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        if len(self.cut_rows) != len(self.cut_bounds):
            raise ValueError("cut rows and bounds must pair up")
        object.__setattr__(self, "lower", tuple(float(v) for v in lo))
        object.__setattr__(self, "upper", tuple(float(v) for v in hi))
        object.__setattr__(
            self, "cut_rows", tuple(tuple(float(c) for c in r) for r in self.cut_rows)
        )
        object.__setattr__(self, "cut_bounds", tuple(float(b) for b in self.cut_bounds))
        if not any(True for _ in self.grid(max((h - l) for h, l in zip(self.upper, self.lower)) or 1.0)):
            raise ValueError("domain is empty")

    @property
    def dim(self) -> int:
        return len(self.lower)

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1)
        for v, lo, hi in zip(x, self.lower, self.upper):
            if v < lo - tol or v > hi + tol:
                return False
        for row, b in zip(self.cut_rows, self.cut_bounds):
            if float(np.dot(row, x)) > b + tol:
                return False
        return True

    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    def _axis_points(self, lo: float, hi: float, step: float) -> np.ndarray:
        if hi <= lo:
            return np.array([lo])
        n = int(np.floor((hi - lo) / step + 1e-9))
        pts = lo + step * np.arange(n + 1)
        if pts[-1] < hi - 1e-12 * max(1.0, abs(hi)):
            pts = np.append(pts, hi)
        else:
            pts[-1] = hi  # land exactly on the boundary
        return pts

    def grid(self, step: float):
        """Yield grid samples (boundary included), filtered by the cuts."""
        if step <= 0:
            raise ValueError("grid step must be > 0")
        axes = [self._axis_points(lo, hi, step) for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=-1)
        if self.cut_rows:
            a = np.asarray(self.cut_rows, dtype=float)
            b = np.asarray(self.cut_bounds, dtype=float)
            keep = np.all(pts @ a.T <= b[None, :] + 1e-9, axis=1)
            pts = pts[keep]
        yield from pts

    def to_dict(self):
        d = {"lower": list(self.lower), "upper": list(self.upper)}
        if self.cut_rows:
            d["cut_rows"] = [list(r) for r in self.cut_rows]
            d["cut_bounds"] = list(self.cut_bounds)
        return d


@dataclass(frozen=True)
class JacobianField:
    """Callable (x, k) -> Jacobian matrix, with dimension metadata."""

    fn: object
    dim: int
    time_invariant: bool = True

    def __call__(self, x, k: int = 0) -> np.ndarray:
        j = np.asarray(self.fn(np.asarray(x, dtype=float), k), dtype=float)
        if j.ndim != 2:
            raise ValueError("Jacobian field must return a matrix")
        if not np.all(np.isfinite(j)):
            raise ValueError(f"non-finite Jacobian at x={x}, k={k}")
        return j


@dataclass(frozen=True)
class ContractionCertificate:
    norm: NormTag
    rate: float
    domain: DomainBox
    grid_step: float
    margin: float
    sample_count: int
    valid: bool
    witness: tuple | None = None
    sampled: bool = True  # grid evidence, not an exhaustive proof
    horizon: tuple | None = None
    norm_rate: float | None = None  # rate in the Theorem-2 (norm bound) sense
    rate_convention: str | None = None

    def to_dict(self):
        d = {
            "norm": self.norm.to_dict(),
            "rate": self.rate,
            "domain": self.domain.to_dict(),
            "grid_step": self.grid_step,
            "margin": self.margin,
            "sample_count": self.sample_count,
            "valid": self.valid,
            "sampled": self.sampled,
        }
        if self.witness is not None:
            d["witness"] = list(self.witness)
        if self.horizon is not None:
            d["horizon"] = list(self.horizon)
        if self.norm_rate is not None:
            d["norm_rate"] = self.norm_rate
        if self.rate_convention is not None:
            d["rate_convention"] = self.rate_convention
        return d


@dataclass(frozen=True)
class CascadeBound:
    alpha: float
    beta: float
    coupling: float
    rho: float
    gamma: float
    contracting: bool

    def __post_init__(self):
        expect = max(self.alpha + self.coupling / self.rho, self.beta)
        if abs(self.gamma - expect) > 1e-12 * max(1.0, expect):
            raise ValueError("gamma must equal max(alpha + coupling/rho, beta)")


def _horizon_or_default(jac: JacobianField, horizon) -> tuple:
    if horizon is not None:
        return tuple(int(k) for k in horizon)
    if not jac.time_invariant:
        raise ValueError("time-varying Jacobian field needs an explicit horizon")
    return (0,)


def verify_contraction(
    jac: JacobianField,
    domain: DomainBox,
    norm: NormTag,
    rate: float,
    grid_step: float,
    horizon=None,
    tol=DEFAULT_TOL,
) -> ContractionCertificate:
    """Check ||J(x, k)|| <= rate at every grid sample of the domain.

    margin = rate - max sampled norm; a certificate with margin below
    -tol.certificate_margin is marked invalid and carries a witness point.
    """
    if not (0.0 <= rate < 1.0):
        raise ValueError("rate must lie in [0, 1)")
    ks = _horizon_or_default(jac, horizon)
    worst = -np.inf
    witness = None
    count = 0
    for x in domain.grid(grid_step):
        for k in ks:
            val = induced_norm(jac(x, k), norm, tol)
            count += 1
            if val > worst:
                worst = val
                witness = tuple(float(v) for v in np.atleast_1d(x))
    if count == 0:
        raise ValueError("empty domain grid")
    margin = rate - worst
    valid = margin >= -tol.certificate_margin
    return ContractionCertificate(
        norm=norm,
        rate=rate,
        domain=domain,
        grid_step=grid_step,
        margin=margin,
        sample_count=count,
        valid=valid,
        witness=None if valid else witness,
        horizon=None if jac.time_invariant else ks,
        norm_rate=rate,
    )


def verify_contraction_lmi(
    jac: JacobianField,
    domain: DomainBox,
    P: SpdMat,
    rate: float,
    grid_step: float,
    horizon=None,
    rate_convention: str = "norm",
    tol=DEFAULT_TOL,
) -> ContractionCertificate:
    """Check the quadratic-form condition J^T P J <= m*P on the grid.

    Two readings of `rate` are in circulation for this condition.  With
    rate_convention="norm" (default) the rate is the bound on the P-weighted
    operator norm and the multiplier is m = rate**2.  With "multiplier" the
    rate multiplies P once (m = rate), which corresponds to a norm bound of
    sqrt(rate); the certificate records that implied bound as norm_rate.
    The margin is the smallest eigenvalue of m*P - J^T P J over all samples.
    """
    if rate_convention not in ("norm", "multiplier"):
        raise ValueError("rate_convention must be 'norm' or 'multiplier'")
    if not (0.0 <= rate < 1.0):
        raise ValueError("rate must lie in [0, 1)")
    mult = rate * rate if rate_convention == "norm" else rate
    norm_rate = rate if rate_convention == "norm" else float(np.sqrt(rate))
    ks = _horizon_or_default(jac, horizon)
    pm = P.entries
    worst = np.inf
    witness = None
    count = 0
    for x in domain.grid(grid_step):
        for k in ks:
            j = jac(x, k)
            if j.shape != (P.dim, P.dim):
                raise ValueError("Jacobian shape does not match P")
            lam = min_eig(mult * pm - j.T @ pm @ j, tol)
            count += 1
            if lam < worst:
                worst = lam
                witness = tuple(float(v) for v in np.atleast_1d(x))
    if count == 0:
        raise ValueError("empty domain grid")
    valid = worst >= -tol.certificate_margin
    return ContractionCertificate(
        norm=NormTag("weighted", P),
        rate=rate,
        domain=domain,
        grid_step=grid_step,
        margin=float(worst),
        sample_count=count,
        valid=valid,
        witness=None if valid else witness,
        horizon=None if jac.time_invariant else ks,
        norm_rate=norm_rate,
        rate_convention=rate_convention,
    )


def cascade_rate(alpha: float, beta: float, coupling: float, rho: float) -> CascadeBound:
    """Combined rate gamma = max(alpha + coupling/rho, beta) of a cascade."""
    if min(alpha, beta, coupling) < 0:
        raise ValueError("rates and coupling must be >= 0")
    if rho <= 0:
        raise ValueError("rho must be > 0")
    gamma = max(alpha + coupling / rho, beta)
    return CascadeBound(alpha, beta, coupling, rho, gamma, contracting=gamma < 1.0)


def divergence_bound(
    rho: float, gamma: float, alpha: float, k_minus_k0: int, initial_gap: float = 0.0
) -> float:
    """rho*(gamma^j - alpha^j) + gamma^j * initial_gap at j = k - k0."""
    if not (0.0 <= alpha <= gamma):
        raise ValueError("need 0 <= alpha <= gamma")
    if rho <= 0:
        raise ValueError("rho must be > 0")
    if initial_gap < 0:
        raise ValueError("initial gap must be >= 0")
    j = int(k_minus_k0)
    if j < 0:
        raise ValueError("k - k0 must be >= 0")
    return rho * (gamma**j - alpha**j) + gamma**j * initial_gap


def observer_coupling_gain(L, state_norm: NormTag, output_norm: NormTag, k_adj: float) -> float:
    """K' = K_adj * sup over the gain schedule of the output-to-state norm of L_k."""
    if k_adj < 0:
        raise ValueError("adjacency bound must be >= 0")
    gains = _as_gain_schedule(L)
    if not gains:
        raise ValueError("empty gain schedule")
    return k_adj * max(_mixed_induced_norm(g, state_norm, output_norm) for g in gains)


def _as_gain_schedule(L) -> list:
    if isinstance(L, (list, tuple)) and L and np.ndim(L[0]) >= 1:
        return [np.atleast_2d(np.asarray(g, dtype=float)) for g in L]
    return [np.atleast_2d(np.asarray(L, dtype=float))]


def _mixed_induced_norm(L: np.ndarray, state_norm: NormTag, output_norm: NormTag) -> float:
    if not np.all(np.isfinite(L)):
        raise ValueError("gain has non-finite entries")
    n, m = L.shape
    if m == 1:
        # unit ball in R^1 is [-1, 1] under every norm tag
        return vec_norm(L[:, 0], state_norm)
    if output_norm.kind == "one":
        # extreme points of the l1 ball are +-e_j
        return max(vec_norm(L[:, j], state_norm) for j in range(m))
    if output_norm.kind == "two" and state_norm.kind == "two":
        return induced_norm_rect_two(L)
    if output_norm.kind == "two" and state_norm.kind == "weighted":
        D = state_norm.weight.sqrt()
        return induced_norm_rect_two(D @ L)
    raise ValueError(
        f"mixed induced norm {output_norm.kind} -> {state_norm.kind} not supported"
    )


def induced_norm_rect_two(L: np.ndarray) -> float:
    """Largest singular value of a rectangular matrix via eigenvalues of L^T L."""
    from .linalg import sym_eig

    w, _ = sym_eig(L.T @ L)
    return float(np.sqrt(max(w[-1], 0.0)))
