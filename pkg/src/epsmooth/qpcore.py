"""Dense convex QP solvers.

``solve_nonneg_qp`` handles ``min 1/2 z'Hz + q'z  s.t. z >= 0`` (the dual
programs after splitting the multipliers), ``solve_ineq_qp`` handles general
``A z <= b`` (the brute-force primal oracle).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, optimize

from .errors import DimensionMismatch, NonSymmetricMatrix

__all__ = [
    "QpProblem",
    "QpSolution",
    "CONVERGED",
    "MAX_ITERATIONS",
    "INFEASIBLE",
    "UNBOUNDED",
    "solve_nonneg_qp",
    "solve_ineq_qp",
    "power_iteration",
]

CONVERGED = "Converged"
MAX_ITERATIONS = "MaxIterations"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 200_000


@dataclass(frozen=True)
class QpProblem:
    Hmat: np.ndarray
    q: np.ndarray
    Aineq: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.Hmat, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float)).ravel()
        d = q.shape[0]
        if H.shape != (d, d):
            raise DimensionMismatch(f"Hmat must be {d}x{d}, got {H.shape}")
        scale = max(1.0, float(np.max(np.abs(H)))) if d else 1.0
        if d and np.max(np.abs(H - H.T)) > 1e-10 * scale:
            raise NonSymmetricMatrix("Hmat is not symmetric")
        object.__setattr__(self, "Hmat", 0.5 * (H + H.T))
        object.__setattr__(self, "q", q)
        if self.Aineq is not None or self.b is not None:
            A = np.asarray(self.Aineq, dtype=float).reshape(-1, d)
            b = np.atleast_1d(np.asarray(self.b, dtype=float)).ravel()
            if A.shape[0] != b.shape[0]:
                raise DimensionMismatch("Aineq and b disagree on the number of rows")
            object.__setattr__(self, "Aineq", A)
            object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.q.shape[0]

    def objective(self, z) -> float:
        return float(0.5 * z @ (self.Hmat @ z) + self.q @ z)


@dataclass
class QpSolution:
    z: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    status: str
    multipliers: Optional[np.ndarray] = None
    ridge: float = 0.0
    objective_history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def power_iteration(H, iters=1000, rtol=1e-12):
    """Largest eigenvalue of a symmetric PSD matrix, from a fixed start vector."""
    d = H.shape[0]
    if d == 0:
        return 0.0
    v = np.ones(d) / np.sqrt(d) + 1e-3 * np.arange(d) / d
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = H @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        new = float(v @ w)
        v = w / nrm
        if abs(new - lam) <= rtol * max(abs(new), 1e-300):
            lam = new
            break
        lam = new
    # the Rayleigh quotient approaches from below; pad against a slow tail
    return max(lam, float(np.linalg.norm(H @ v)))


def _nonneg_residual(z, g):
    return float(np.max(np.abs(np.minimum(z, g)))) if z.size else 0.0


def _polish(problem, z):
    """Solve the equality system on the current support; None if not an improvement."""
    free = z > 0
    if not free.any():
        return None
    H = problem.Hmat[np.ix_(free, free)]
    rhs = -problem.q[free]
    try:
        zf = linalg.cho_solve(linalg.cho_factor(H, lower=True), rhs)
    except linalg.LinAlgError:
        zf = np.linalg.lstsq(H, rhs, rcond=None)[0]
    if not np.all(np.isfinite(zf)) or np.any(zf < 0):
        return None
    cand = np.zeros_like(z)
    cand[free] = zf
    return cand


def solve_nonneg_qp(problem: QpProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                    x0=None, polish_every: int = 20, unbounded_norm: float = 1e8,
                    opposite_pairs=None) -> QpSolution:
    """Minimize ``1/2 z'Hz + q'z`` over ``z >= 0``.

    Accelerated projected gradient with step ``1/L`` (``L`` from power
    iteration) and a function-value restart that makes the accepted iterates
    monotone. Every ``polish_every`` iterations the support of the iterate is
    frozen and the reduced equality system solved directly; the result is
    accepted when feasible and not worse (ties within round-off go to
    the smaller KKT residual). Terminates once
    ``max|min(z, Hz+q)| <= tol``.

    ``status`` is ``Unbounded`` when the iterate norm passes ``unbounded_norm``
    while the objective keeps decreasing.

    ``opposite_pairs`` is an optional ``(2, k)`` index array of variable pairs
    with ``H e_i = -H e_j`` and ``q_i + q_j >= 0`` (a difference split into
    positive and negative parts). Subtracting the common part of each pair
    never raises the objective, so it is done after every step; this keeps
    the pair complementary and the polish system nonsingular.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    H, q = problem.Hmat, problem.q
    d = problem.dim
    if d == 0:
        return QpSolution(np.zeros(0), 0.0, 0.0, 0, CONVERGED, objective_history=[0.0])

    L = power_iteration(H) * 1.01
    if L <= 0.0:
        # linear objective over the orthant
        if np.all(q >= 0):
            return QpSolution(np.zeros(d), 0.0, 0.0, 0, CONVERGED, objective_history=[0.0])
        return QpSolution(np.zeros(d), -np.inf, np.inf, 0, UNBOUNDED)

    if opposite_pairs is not None:
        pi, pj = np.asarray(opposite_pairs, dtype=int)
        if np.any(q[pi] + q[pj] < 0) or not np.allclose(H[:, pi], -H[:, pj], rtol=0, atol=1e-12 * L):
            raise ValueError("opposite_pairs do not describe a split variable")

        def cancel(v):
            common = np.minimum(v[pi], v[pj])
            v[pi] -= common
            v[pj] -= common
            return v
    else:
        def cancel(v):
            return v

    x = np.zeros(d) if x0 is None else cancel(np.maximum(np.asarray(x0, dtype=float), 0.0))
    fx = problem.objective(x)
    history = [fx]
    y = x.copy()
    t = 1.0
    status = MAX_ITERATIONS
    res = _nonneg_residual(x, H @ x + q)
    it = 0
    if res <= tol:
        status = CONVERGED
    while status == MAX_ITERATIONS and it < max_iter:
        it += 1
        z = cancel(np.maximum(y - (H @ y + q) / L, 0.0))
        fz = problem.objective(z)
        if fz <= fx:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = z + ((t - 1.0) / t_next) * (z - x)
            x, fx, t = z, fz, t_next
        else:
            y = x.copy()
            t = 1.0
        history.append(fx)

        if it % polish_every == 0:
            cand = _polish(problem, x)
            if cand is not None:
                fc = problem.objective(cand)
                # near the optimum both values agree to round-off; then the
                # stationarity residual decides
                slack = 1e-12 * (1.0 + abs(fx))
                better = fc < fx - slack or (
                    fc <= fx + slack
                    and _nonneg_residual(cand, H @ cand + q) < _nonneg_residual(x, H @ x + q)
                )
                if better:
                    x, fx = cand, fc
                    y = x.copy()
                    t = 1.0
                    history[-1] = fx
        if it % 5 == 0 or it % polish_every == 0:
            res = _nonneg_residual(x, H @ x + q)
            if res <= tol:
                status = CONVERGED
            elif np.max(x) > unbounded_norm and history[-1] < history[max(0, len(history) - 50)]:
                status = UNBOUNDED

    res = _nonneg_residual(x, H @ x + q)
    if status == MAX_ITERATIONS and res <= tol:
        status = CONVERGED
    return QpSolution(x, fx, res, it, status, objective_history=history)


def _find_feasible(A, b):
    """A point with ``A z <= b``, or None if the set is empty."""
    r, d = A.shape
    if r == 0:
        return np.zeros(d)
    # maximize a common slack s <= 1 so the point sits away from the boundary
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A_ub = np.hstack([A, np.ones((r, 1))])
    bounds = [(None, None)] * d + [(None, 1.0)]
    out = optimize.linprog(c, A_ub=A_ub, b_ub=b, bounds=bounds, method="highs")
    if out.status != 0 or out.x[-1] < -1e-9 * (1.0 + np.max(np.abs(b))):
        return None
    return out.x[:d]


def _ineq_kkt(H, q, A, b, z, mu):
    stat = H @ z + q + A.T @ mu
    slack = b - A @ z
    parts = [
        np.max(np.abs(stat)) if stat.size else 0.0,
        np.max(np.maximum(-slack, 0.0)) if slack.size else 0.0,
        np.max(np.maximum(-mu, 0.0)) if mu.size else 0.0,
        np.max(np.abs(mu * slack)) if mu.size else 0.0,
    ]
    return float(max(parts))


def solve_ineq_qp(problem: QpProblem, tol: float = DEFAULT_TOL, max_iter: int = 10_000) -> QpSolution:
    """Minimize ``1/2 z'Hz + q'z`` subject to ``Aineq z <= b`` (H positive definite).

    Primal active-set method: a feasible start from a phase-one LP, then
    equality-constrained steps on a working set with Bland's rule (lowest
    index) for both adding blocking constraints and dropping negative
    multipliers.
    """
    H, q = problem.Hmat, problem.q
    d = problem.dim
    A = problem.Aineq if problem.Aineq is not None else np.zeros((0, d))
    b = problem.b if problem.b is not None else np.zeros(0)
    r = A.shape[0]

    ridge = 0.0
    try:
        cH = linalg.cho_factor(H, lower=True)
    except linalg.LinAlgError:
        ridge = 1e-10 * np.trace(H) / max(d, 1)
        cH = linalg.cho_factor(H + ridge * np.eye(d), lower=True)

    z = _find_feasible(A, b)
    if z is None:
        return QpSolution(np.full(d, np.nan), np.nan, np.inf, 0, INFEASIBLE, ridge=ridge)

    bscale = 1.0 + (np.max(np.abs(b)) if r else 0.0)
    W: list[int] = []
    mu_full = np.zeros(r)
    history = [problem.objective(z)]
    status = MAX_ITERATIONS
    it = 0
    while it < max_iter:
        it += 1
        g = H @ z + q
        if W:
            # full KKT system; the Schur-complement route squares the
            # conditioning and stalls on ill-conditioned oracles
            Aw = A[W]
            k = len(W)
            K = np.block([[H + ridge * np.eye(d), Aw.T], [Aw, np.zeros((k, k))]])
            rhs = np.concatenate([-g, np.zeros(k)])
            try:
                sol_pm = linalg.solve(K, rhs, assume_a="sym")
            except (linalg.LinAlgError, ValueError):
                sol_pm = np.linalg.lstsq(K, rhs, rcond=None)[0]
            p, mu = sol_pm[:d], sol_pm[d:]
        else:
            mu = np.zeros(0)
            p = -linalg.cho_solve(cH, g)

        fz = problem.objective(z)
        tiny_step = np.max(np.abs(p)) <= 1e-10 * (1.0 + np.max(np.abs(z)))
        tiny_gain = 0.5 * p @ (H @ p) <= 1e-15 * (1.0 + abs(fz))
        if tiny_step or tiny_gain:
            mu_full = np.zeros(r)
            mu_full[W] = mu
            floor = -1e-12 * (1.0 + np.max(np.abs(mu), initial=0.0))
            neg = [W[i] for i in range(len(W)) if mu[i] < floor]
            if not neg:
                mu_full = np.maximum(mu_full, 0.0)
                status = CONVERGED
                break
            W.remove(min(neg))
            continue

        alpha, block = 1.0, None
        Ap = A @ p
        slack = b - A @ z
        for i in range(r):
            if i in W or Ap[i] <= 1e-14 * (1.0 + abs(slack[i])):
                continue
            step = max(slack[i], 0.0) / Ap[i]
            if step < alpha - 1e-15:
                alpha, block = step, i
        z = z + alpha * p
        history.append(problem.objective(z))
        if block is not None:
            W.append(block)
            W.sort()

    res = _ineq_kkt(H, q, A, b, z, mu_full)
    if status == CONVERGED and res > tol * bscale * (1.0 + np.max(np.abs(q), initial=0.0)):
        status = MAX_ITERATIONS
    return QpSolution(z, problem.objective(z), res, it, status, multipliers=mu_full,
                      ridge=ridge, objective_history=history)
