"""Dense small-matrix arithmetic: norms, symmetric eigensolver, SPD square root.

Everything here targets matrices of dimension <= ~10.  The eigensolver is a
cyclic Jacobi iteration rather than a LAPACK call so that certificate
re-verification does not share a code path with any optimization backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tolerances",
    "DEFAULT_TOL",
    "SpdMat",
    "NormTag",
    "ONE",
    "TWO",
    "INF",
    "weighted",
    "vec_norm",
    "induced_norm",
    "sym_eig",
    "min_eig",
    "spd_sqrt",
]


@dataclass(frozen=True)
class Tolerances:
    """Central numeric tolerances; tests tighten or loosen these uniformly."""

    symmetry_rel: float = 1e-12       # allowed relative asymmetry on input
    jacobi_max_sweeps: int = 100      # iteration cap for the eigensolver
    jacobi_offdiag: float = 1e-14     # off-diagonal stop, relative to scale
    reconstruction_rel: float = 1e-10  # V diag(w) V^T must match to this
    sqrt_rel: float = 1e-10           # D @ D vs P, relative Frobenius
    certificate_margin: float = 1e-9  # grid margins this far below 0 still valid


DEFAULT_TOL = Tolerances()


def _as_square(a, name: str) -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def _check_symmetric(m: np.ndarray, name: str, tol: Tolerances) -> np.ndarray:
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > tol.symmetry_rel * scale:
        raise ValueError(f"{name} is not symmetric within tolerance")
    return 0.5 * (m + m.T)


class SpdMat:
    """Symmetric positive definite matrix, validated on construction."""

    __slots__ = ("entries", "dim", "_eig")

    def __init__(self, entries, tol: Tolerances = DEFAULT_TOL):
        m = _as_square(entries, "SpdMat")
        m = _check_symmetric(m, "SpdMat", tol)
        w, v = sym_eig(m, tol)
        if w[0] <= 0.0:
            raise ValueError(f"SpdMat must be positive definite (min eig {w[0]:.3e})")
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "dim", m.shape[0])
        object.__setattr__(self, "_eig", (w, v))

    def __setattr__(self, *_):
        raise AttributeError("SpdMat is immutable")

    def eig(self):
        """Eigenvalues (ascending) and orthonormal eigenvectors."""
        return self._eig

    def sqrt(self) -> np.ndarray:
        """Symmetric D with D @ D == entries."""
        w, v = self._eig
        return (v * np.sqrt(w)) @ v.T

    def sqrt_inv(self) -> np.ndarray:
        w, v = self._eig
        return (v / np.sqrt(w)) @ v.T

    def inverse(self) -> np.ndarray:
        w, v = self._eig
        return (v / w) @ v.T

    def __repr__(self):
        return f"SpdMat({self.entries.tolist()})"


@dataclass(frozen=True)
class NormTag:
    """Vector norm selector: 1, 2, max, or P-weighted sqrt(x^T P x)."""

    kind: str
    weight: SpdMat | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("one", "two", "inf", "weighted"):
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.kind == "weighted" and self.weight is None:
            raise ValueError("weighted norm requires an SpdMat weight")

    def to_dict(self):
        d = {"kind": self.kind}
        if self.weight is not None:
            d["weight"] = self.weight.entries.tolist()
        return d


ONE = NormTag("one")
TWO = NormTag("two")
INF = NormTag("inf")


def weighted(P) -> NormTag:
    return NormTag("weighted", P if isinstance(P, SpdMat) else SpdMat(P))


def vec_norm(v, tag: NormTag) -> float:
    """Norm of a vector under the given tag."""
    x = np.asarray(v, dtype=float).reshape(-1)
    if tag.kind == "one":
        return float(np.abs(x).sum())
    if tag.kind == "two":
        return float(math.sqrt(float(x @ x)))
    if tag.kind == "inf":
        return float(np.abs(x).max())
    P = tag.weight
    if x.shape[0] != P.dim:
        raise ValueError(f"vector length {x.shape[0]} != weight dim {P.dim}")
    return float(math.sqrt(max(float(x @ P.entries @ x), 0.0)))


def induced_norm(A, tag: NormTag, tol: Tolerances = DEFAULT_TOL) -> float:
    """Operator norm of A induced by the tagged vector norm.

    one -> max column abs-sum, inf -> max row abs-sum, two -> largest
    singular value, weighted(P) -> ||D A D^-1||_2 with D the SPD square
    root of P (A must be square for the weighted case).
    """
    m = np.asarray(A, dtype=float)
    if m.ndim != 2:
        raise ValueError("induced_norm expects a matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    if tag.kind == "one":
        return float(np.abs(m).sum(axis=0).max())
    if tag.kind == "inf":
        return float(np.abs(m).sum(axis=1).max())
    if tag.kind == "two":
        return _spectral_norm(m, tol)
    P = tag.weight
    if m.shape[0] != m.shape[1] or m.shape[0] != P.dim:
        raise ValueError("weighted induced norm needs square A matching weight dim")
    D = P.sqrt()
    Dinv = P.sqrt_inv()
    return _spectral_norm(D @ m @ Dinv, tol)


def _spectral_norm(m: np.ndarray, tol: Tolerances) -> float:
    # largest singular value via eigenvalues of A^T A; fine at these sizes
    w, _ = sym_eig(m.T @ m, tol)
    return float(math.sqrt(max(w[-1], 0.0)))


def sym_eig(S, tol: Tolerances = DEFAULT_TOL):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (w, V) with eigenvalues ascending and S == V @ diag(w) @ V.T.
    Raises on asymmetric input or if the sweep cap is exceeded.
    """
    m = _as_square(S, "sym_eig input")
    m = _check_symmetric(m, "sym_eig input", tol)
    n = m.shape[0]
    a = m.copy()
    v = np.eye(n)
    if n == 1:
        return np.array([a[0, 0]]), v
    scale = float(np.abs(a).max())
    if scale == 0.0:
        return np.zeros(n), v
    stop = tol.jacobi_offdiag * scale
    for _ in range(tol.jacobi_max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off = max(off, abs(a[p, q]))
        if off <= stop:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= stop * 1e-2:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    else:
        raise RuntimeError("Jacobi eigensolver: sweep cap exceeded")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def min_eig(S, tol: Tolerances = DEFAULT_TOL) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    w, _ = sym_eig(S, tol)
    return float(w[0])


def spd_sqrt(P, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """Symmetric positive definite square root of P."""
    if isinstance(P, SpdMat):
        return P.sqrt()
    return SpdMat(P, tol).sqrt()
