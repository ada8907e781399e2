"""Observer gain design from sampled contraction LMIs.

Decision variables are the symmetric metric P, the transformed gain X = P L,
and scalar bounds (g1, g2) on the gain size and on the noise shape:

    [beta*P - J^T P J + J^T X C + C^T X^T J,  C^T X^T]
    [X C,                                     P      ]  >= 0   per sample J
    [g1*I, X^T; X, P] >= 0,   [g2*I, I; I, P] >= 0,   P >= c'*I

minimizing g1 + c*g2.  The gain is recovered as L = P^-1 X.

The interior-point solve is delegated to the Clarabel SDP backend; the
returned point is independently re-verified with the in-house Jacobi
eigensolver (no code shared with the backend).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .linalg import SpdMat, min_eig

__all__ = [
    "SynthesisProblem",
    "SynthesisResult",
    "PhaseOneReport",
    "InfeasibleProblem",
    "assemble_contraction_lmi",
    "assemble_perf1_lmi",
    "assemble_perf2_lmi",
    "assemble_all",
    "synthesize",
    "solver_phase1",
    "reverify",
]

# inactive-by-default caps keeping the feasible set bounded (the metric scale
# is otherwise a free ray and open-loop-contracting instances have no
# attained minimum)
P_SCALE_CAP = 1e6
G_CAP = 1e9
PHASE1_MARGIN = 1e-6


class InfeasibleProblem(RuntimeError):
    """No strictly feasible point exists; carries the phase-1 report."""

    def __init__(self, report: "PhaseOneReport"):
        super().__init__(report.message)
        self.report = report


@dataclass(frozen=True)
class SynthesisProblem:
    jac_samples: tuple
    c_obs: np.ndarray
    beta: float
    c: float = 1.0
    c_prime: float = 0.0

    def __post_init__(self):
        samples = tuple(np.asarray(j, dtype=float) for j in self.jac_samples)
        if not samples:
            raise ValueError("need at least one Jacobian sample")
        n = samples[0].shape[0]
        for j in samples:
            if j.shape != (n, n) or not np.all(np.isfinite(j)):
                raise ValueError("Jacobian samples must be finite square matrices of equal size")
        c_obs = np.atleast_2d(np.asarray(self.c_obs, dtype=float))
        if c_obs.shape[1] != n:
            raise ValueError("observation matrix column count must match state dim")
        if not (0.0 < self.beta < 1.0):
            raise ValueError("beta must lie in (0, 1)")
        if self.c <= 0:
            raise ValueError("objective weight c must be > 0")
        if self.c_prime < 0:
            raise ValueError("c_prime must be >= 0")
        object.__setattr__(self, "jac_samples", samples)
        object.__setattr__(self, "c_obs", c_obs)

    @property
    def state_dim(self) -> int:
        return self.jac_samples[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.c_obs.shape[0]

    @property
    def n_vars(self) -> int:
        n, m = self.state_dim, self.output_dim
        return n * (n + 1) // 2 + n * m + 2

    def to_dict(self):
        return {
            "n_samples": len(self.jac_samples),
            "state_dim": self.state_dim,
            "output_dim": self.output_dim,
            "beta": self.beta,
            "c": self.c,
            "c_prime": self.c_prime,
        }


@dataclass(frozen=True)
class SynthesisResult:
    P: SpdMat
    X: np.ndarray
    L: np.ndarray
    g1: float
    g2: float
    objective: float
    min_margin: float
    iterations: int
    converged: bool
    beta: float = float("nan")  # certified LMI multiplier of the program
    objective_trace: tuple = ()

    def to_dict(self):
        return {
            "beta": self.beta,
            "P": self.P.entries.tolist(),
            "X": self.X.tolist(),
            "L": self.L.tolist(),
            "g1": self.g1,
            "g2": self.g2,
            "objective": self.objective,
            "min_margin": self.min_margin,
            "iterations": self.iterations,
            "converged": self.converged,
            "objective_trace": list(self.objective_trace),
        }

    @staticmethod
    def from_dict(d: dict) -> "SynthesisResult":
        return SynthesisResult(
            P=SpdMat(np.asarray(d["P"], dtype=float)),
            X=np.asarray(d["X"], dtype=float),
            L=np.asarray(d["L"], dtype=float),
            g1=float(d["g1"]),
            g2=float(d["g2"]),
            objective=float(d["objective"]),
            min_margin=float(d["min_margin"]),
            iterations=int(d["iterations"]),
            converged=bool(d["converged"]),
            beta=float(d.get("beta", float("nan"))),
            objective_trace=tuple(d.get("objective_trace", ())),
        )


@dataclass(frozen=True)
class PhaseOneReport:
    feasible: bool
    slack: float  # optimal t in min t s.t. A_j + t I >= 0
    worst_constraint: str
    worst_eig: float
    message: str
    point: dict | None = None


def _as_array(P) -> np.ndarray:
    return P.entries if isinstance(P, SpdMat) else np.asarray(P, dtype=float)


def assemble_contraction_lmi(J, P, X, C, beta: float) -> np.ndarray:
    """Schur-complement block of the per-sample contraction condition."""
    J = np.asarray(J, dtype=float)
    Pm = _as_array(P)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = J.shape[0]
    if X.shape == (1, n):  # accept row-shaped gain for m = 1
        X = X.T
    if Pm.shape != (n, n) or X.shape[0] != n or C.shape[1] != n or C.shape[0] != X.shape[1]:
        raise ValueError("dimension mismatch in contraction block")
    tl = beta * Pm - J.T @ Pm @ J + J.T @ X @ C + C.T @ X.T @ J
    top = np.hstack([tl, C.T @ X.T])
    bot = np.hstack([X @ C, Pm])
    return np.vstack([top, bot])


def assemble_perf1_lmi(X, P, g1: float) -> np.ndarray:
    """Gain-size block: feasible iff g1 >= largest eigenvalue of X^T P^-1 X."""
    Pm = _as_array(P)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = Pm.shape[0]
    if X.shape[0] != n:
        if X.shape[1] == n:
            X = X.T
        else:
            raise ValueError("gain variable shape does not match P")
    m = X.shape[1]
    top = np.hstack([g1 * np.eye(m), X.T])
    bot = np.hstack([X, Pm])
    return np.vstack([top, bot])


def assemble_perf2_lmi(P, g2: float) -> np.ndarray:
    """Noise-shape block: feasible iff g2 >= largest eigenvalue of P^-1."""
    Pm = _as_array(P)
    n = Pm.shape[0]
    top = np.hstack([g2 * np.eye(n), np.eye(n)])
    bot = np.hstack([np.eye(n), Pm])
    return np.vstack([top, bot])


def assemble_all(prob: SynthesisProblem, P, X, g1: float, g2: float) -> list:
    """All LMI blocks of the program at the given point, floor included."""
    Pm = _as_array(P)
    blocks = [
        assemble_contraction_lmi(J, Pm, X, prob.c_obs, prob.beta)
        for J in prob.jac_samples
    ]
    blocks.append(assemble_perf1_lmi(X, Pm, g1))
    blocks.append(assemble_perf2_lmi(Pm, g2))
    blocks.append(Pm - prob.c_prime * np.eye(prob.state_dim))
    return blocks


def reverify(prob: SynthesisProblem, P, X, g1: float, g2: float) -> float:
    """Smallest eigenvalue over every assembled LMI, via the Jacobi solver."""
    return min(min_eig(b) for b in assemble_all(prob, P, X, g1, g2))


# ---------------------------------------------------------------------------
# backend plumbing


def _sym_basis(n: int) -> list:
    out = []
    for a in range(n):
        for b in range(a + 1):
            e = np.zeros((n, n))
            e[a, b] = 1.0
            e[b, a] = 1.0
            out.append(e)
    return out


def _pack(P: np.ndarray, X: np.ndarray, g1: float, g2: float) -> np.ndarray:
    n, m = P.shape[0], X.shape[1]
    vals = [P[a, b] for a in range(n) for b in range(a + 1)]
    vals.extend(X.reshape(-1))
    vals.extend([g1, g2])
    return np.array(vals)


def _unpack(theta: np.ndarray, n: int, m: int):
    P = np.zeros((n, n))
    k = 0
    for a in range(n):
        for b in range(a + 1):
            P[a, b] = P[b, a] = theta[k]
            k += 1
    X = theta[k : k + n * m].reshape(n, m)
    return P, X, float(theta[-2]), float(theta[-1])


def _block_families(prob: SynthesisProblem) -> list:
    """Affine families A0 + sum_i theta_i B_i as (A0(N,s,s), B(N,d,s,s))."""
    n, m, d = prob.state_dim, prob.output_dim, prob.n_vars
    Es = _sym_basis(n)
    np_p = len(Es)
    C = prob.c_obs
    fams = []

    N = len(prob.jac_samples)
    s2 = 2 * n
    A0 = np.zeros((N, s2, s2))
    B = np.zeros((N, d, s2, s2))
    for j, J in enumerate(prob.jac_samples):
        for i, E in enumerate(Es):
            blk = np.zeros((s2, s2))
            blk[:n, :n] = prob.beta * E - J.T @ E @ J
            blk[n:, n:] = E
            B[j, i] = blk
        for r in range(n):
            for cc in range(m):
                ei = np.zeros((n, m))
                ei[r, cc] = 1.0
                blk = np.zeros((s2, s2))
                blk[:n, :n] = J.T @ ei @ C + C.T @ ei.T @ J
                blk[:n, n:] = C.T @ ei.T
                blk[n:, :n] = ei @ C
                B[j, np_p + r * m + cc] = blk
    fams.append((A0, B))

    s1 = m + n
    A0 = np.zeros((1, s1, s1))
    B = np.zeros((1, d, s1, s1))
    for i, E in enumerate(Es):
        blk = np.zeros((s1, s1))
        blk[m:, m:] = E
        B[0, i] = blk
    for r in range(n):
        for cc in range(m):
            ei = np.zeros((n, m))
            ei[r, cc] = 1.0
            blk = np.zeros((s1, s1))
            blk[:m, m:] = ei.T
            blk[m:, :m] = ei
            B[0, np_p + r * m + cc] = blk
    blk = np.zeros((s1, s1))
    blk[:m, :m] = np.eye(m)
    B[0, d - 2] = blk
    fams.append((A0, B))

    s2b = 2 * n
    A0 = np.zeros((1, s2b, s2b))
    A0[0, :n, n:] = np.eye(n)
    A0[0, n:, :n] = np.eye(n)
    B = np.zeros((1, d, s2b, s2b))
    for i, E in enumerate(Es):
        blk = np.zeros((s2b, s2b))
        blk[n:, n:] = E
        B[0, i] = blk
    blk = np.zeros((s2b, s2b))
    blk[:n, :n] = np.eye(n)
    B[0, d - 1] = blk
    fams.append((A0, B))

    # floor P >= c' I
    A0 = np.zeros((1, n, n))
    A0[0] = -prob.c_prime * np.eye(n)
    B = np.zeros((1, d, n, n))
    for i, E in enumerate(Es):
        B[0, i] = E
    fams.append((A0, B))

    # caps: P <= cap*I, g1 <= G, g2 <= G
    A0 = np.zeros((1, n, n))
    A0[0] = P_SCALE_CAP * np.eye(n)
    B = np.zeros((1, d, n, n))
    for i, E in enumerate(Es):
        B[0, i] = -E
    fams.append((A0, B))
    for gi in (d - 2, d - 1):
        A0 = np.full((1, 1, 1), G_CAP)
        B = np.zeros((1, d, 1, 1))
        B[0, gi, 0, 0] = -1.0
        fams.append((A0, B))
    return fams


def _svec(M: np.ndarray) -> np.ndarray:
    # scaled upper-triangular stacking used by the backend's PSD cone
    n = M.shape[0]
    r2 = math.sqrt(2.0)
    out = np.empty(n * (n + 1) // 2)
    k = 0
    for col in range(n):
        for row in range(col + 1):
            out[k] = M[row, col] * (1.0 if row == col else r2)
            k += 1
    return out


def _run_backend(fams, q):
    """Solve min q^T x s.t. A0 + sum x_i B_i >= 0 per family via Clarabel."""
    import clarabel

    d = len(q)
    rows = []
    rhs = []
    cones = []
    for A0, B in fams:
        N, s_dim = A0.shape[0], A0.shape[1]
        tri = s_dim * (s_dim + 1) // 2
        for j in range(N):
            rhs.append(_svec(A0[j]))
            blockA = np.empty((tri, d))
            for i in range(d):
                blockA[:, i] = _svec(-B[j, i])
            rows.append(blockA)
            cones.append(clarabel.PSDTriangleConeT(s_dim))
    A = sparse.csc_matrix(np.vstack(rows))
    b = np.concatenate(rhs)
    P0 = sparse.csc_matrix((d, d))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    solver = clarabel.DefaultSolver(P0, q, A, b, cones, settings)
    sol = solver.solve()
    return sol


def _extend_with_slack(fams, d: int) -> list:
    out = []
    for A0, B in fams:
        s = A0.shape[1]
        Bt = np.zeros((B.shape[0], d + 1, s, s))
        Bt[:, :d] = B
        Bt[:, d] = np.eye(s)
        out.append((A0, Bt))
    return out


def _family_eigs(fams, theta: np.ndarray):
    """(name, min_eig) per block at theta, smallest first."""
    eigs = []
    n_contr = fams[0][0].shape[0]
    for A0, B in fams:
        A = A0 + np.einsum("i,jiab->jab", theta, B)
        eigs.append(np.linalg.eigvalsh(A)[:, 0])
    labels = [(f"contraction sample #{j}", float(eigs[0][j])) for j in range(n_contr)]
    fam_names = ["perf1 (gain-size)", "perf2 (noise-shape)", "P floor",
                 "P scale cap", "g1 cap", "g2 cap"]
    for nm, w in zip(fam_names, eigs[1:]):
        labels.append((nm, float(w[0])))
    return sorted(labels, key=lambda t: t[1])


def solver_phase1(prob: SynthesisProblem, margin: float = PHASE1_MARGIN) -> PhaseOneReport:
    """Find a strictly feasible (P, X, g1, g2) or report the blocking constraint.

    Solves min t s.t. every LMI block plus t*I is PSD (always feasible); the
    program is strictly feasible exactly when the optimal slack t* < 0.
    """
    d = prob.n_vars
    fams = _block_families(prob)
    ext = _extend_with_slack(fams, d)
    q = np.zeros(d + 1)
    q[d] = 1.0
    sol = _run_backend(ext, q)
    status = str(sol.status)
    if status not in ("SolverStatus.Solved", "Solved", "SolverStatus.AlmostSolved", "AlmostSolved"):
        return PhaseOneReport(
            feasible=False, slack=math.inf, worst_constraint="(backend failure)",
            worst_eig=-math.inf, message=f"phase-1 backend status {status}",
        )
    x = np.asarray(sol.x)
    theta, slack = x[:d], float(x[d])
    ranked = _family_eigs(fams, theta)
    worst_name, worst_eig = ranked[0]
    if slack > -margin:
        msg = (
            f"no strictly feasible point: best slack {slack:.3e} "
            f"(needs <= {-margin:.0e}); most violated: {worst_name} "
            f"with min eigenvalue {worst_eig:.3e}"
        )
        return PhaseOneReport(False, slack, worst_name, worst_eig, msg)
    P, X, g1, g2 = _unpack(theta, prob.state_dim, prob.output_dim)
    P, X, g1, g2 = _rescale_point(prob, P, X, g1, g2, margin)
    g1, g2 = _tighten_bounds(prob, P, X, g1, g2, margin)
    return PhaseOneReport(
        feasible=True,
        slack=slack,
        worst_constraint=worst_name,
        worst_eig=worst_eig,
        message=f"strictly feasible start found (slack {slack:.3e})",
        point={"P": P, "X": X, "g1": g1, "g2": g2},
    )


def _rescale_point(prob, P, X, g1, g2, margin):
    """Move along the exact scale-covariance ray (P,X,g1 -> s*, g2 -> /s) to
    the objective-balanced scale; feasibility is preserved by construction."""
    Pinv = np.linalg.inv(P)
    lx = float(np.linalg.eigvalsh(X.T @ Pinv @ X).max()) if X.size else 0.0
    lp = float(np.linalg.eigvalsh(Pinv).max())
    if lx <= 0 or lp <= 0:
        return P, X, g1, g2
    s = math.sqrt(prob.c * lp / lx)
    cand = (s * P, s * X, s * g1, g2 / s)
    worst = min(min_eig(b) for b in assemble_all(prob, *cand))
    if worst >= margin:
        return cand
    return P, X, g1, g2


def _tighten_bounds(prob, P, X, g1, g2, margin):
    """Pull g1, g2 down to just above their Schur bounds (phase-1 leaves them
    wherever the slack minimization parked them)."""

    def shrink(target, make_block, fallback):
        # keep a healthy relative margin: the point later anchors a blend
        # that repairs backend boundary violations
        g = target * (1.0 + 1e-3) + margin
        for _ in range(60):
            if min_eig(make_block(g)) >= margin:
                return min(g, fallback)
            g = target + 2.0 * (g - target)
        return fallback

    Pinv = np.linalg.inv(P)
    lx = float(np.linalg.eigvalsh(X.T @ Pinv @ X).max()) if X.size else 0.0
    lp = float(np.linalg.eigvalsh(Pinv).max())
    g1 = shrink(lx, lambda g: assemble_perf1_lmi(X, P, g), g1)
    g2 = shrink(lp, lambda g: assemble_perf2_lmi(P, g), g2)
    return g1, g2


def synthesize(prob: SynthesisProblem) -> SynthesisResult:
    """Minimize g1 + c*g2 over the sampled-LMI program and recover L = P^-1 X.

    Raises InfeasibleProblem when phase 1 finds no strictly feasible point.
    A backend run that stops early returns the best point flagged unconverged.
    """
    report = solver_phase1(prob)
    if not report.feasible:
        raise InfeasibleProblem(report)
    p0 = report.point
    trace = [float(p0["g1"] + prob.c * p0["g2"])]

    d = prob.n_vars
    fams = _block_families(prob)
    q = np.zeros(d)
    q[d - 2] = 1.0
    q[d - 1] = prob.c
    sol = _run_backend(fams, q)
    status = str(sol.status)
    converged = status in ("SolverStatus.Solved", "Solved")
    usable = converged or status in ("SolverStatus.AlmostSolved", "AlmostSolved",
                                     "SolverStatus.MaxIterations", "MaxIterations")
    if not usable:
        raise InfeasibleProblem(
            PhaseOneReport(False, math.inf, "(backend failure)", -math.inf,
                           f"synthesis backend status {status}")
        )
    theta = np.asarray(sol.x)
    P, X, g1, g2 = _unpack(theta, prob.state_dim, prob.output_dim)
    margin_here = reverify(prob, P, X, g1, g2)
    if margin_here < -1e-10 and report.point is not None:
        # pull toward the strictly feasible interior point if the backend's
        # boundary point dips below PSD-ness beyond eigensolver noise
        for blend in (1e-7, 1e-6, 1e-5, 1e-4, 1e-3):
            Pb = (1 - blend) * P + blend * p0["P"]
            Xb = (1 - blend) * X + blend * p0["X"]
            g1b = (1 - blend) * g1 + blend * p0["g1"]
            g2b = (1 - blend) * g2 + blend * p0["g2"]
            m = reverify(prob, Pb, Xb, g1b, g2b)
            if m >= -1e-10:
                P, X, g1, g2, margin_here = Pb, Xb, g1b, g2b, m
                break
    objective = float(g1 + prob.c * g2)
    trace.append(objective)
    L = np.linalg.solve(P, X)
    return SynthesisResult(
        P=SpdMat(P),
        X=X,
        L=L,
        g1=g1,
        g2=g2,
        objective=objective,
        min_margin=float(margin_here),
        iterations=int(sol.iterations),
        converged=bool(converged),
        beta=prob.beta,
        objective_trace=tuple(trace),
    )
