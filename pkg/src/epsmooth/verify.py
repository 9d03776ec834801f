"""Ground truth for the dual-route estimators.

``primal_brute_force`` solves the original estimation problems directly over
``(x_0, w, eta)`` with states eliminated by forward substitution, so it shares
no algebra with the dual programs. ``check_kkt`` audits any estimate that
carries multipliers against the Lagrangian stationarity conditions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InfeasibleConstraints, MissingDual, SolverError
from .estimators import DualSolution, EstimateResult, _dual_objective, primal_objective, reconstruct
from .model import SystemModel, WeightSpec, validate_model
from .operators import ConstraintSet, _measurement_rows, stack_operators
from .qpcore import INFEASIBLE, QpProblem, solve_ineq_qp

__all__ = [
    "KktReport",
    "Instance",
    "primal_brute_force",
    "check_kkt",
    "objective_value",
    "random_instance",
]


def _state_maps(model, horizon):
    """``Phi[k]`` maps ``u = (x_0, w_0..w_{H-1})`` to ``x_k``."""
    n, l = model.n, model.l
    du = n + horizon * l
    Phi = np.zeros((horizon + 1, n, du))
    Phi[0, :, :n] = np.eye(n)
    for k in range(horizon):
        Phi[k + 1] = model.A @ Phi[k]
        Phi[k + 1, :, n + k * l : n + (k + 1) * l] += model.B
    return Phi


def primal_brute_force(model: SystemModel, weights: WeightSpec, measurements,
                       constraints: Optional[ConstraintSet] = None, j: Optional[int] = None,
                       max_vars: int = 300, tol: float = 1e-10) -> EstimateResult:
    """Solve the smoothing (``j=None``) or prediction problem as one primal QP.

    ``eps == 0`` is accepted and reproduces the quadratic-loss smoother.
    Multipliers of the tube rows give ``gamma``/``beta``, those of the
    constraint rows give ``xi``.
    """
    model, weights = validate_model(model, weights, strict_eps=False)
    y = _measurement_rows(model, measurements)
    N, m = y.shape
    n, l = model.n, model.l
    Hz = N + (j or 0)
    if constraints is None:
        constraints = ConstraintSet.empty(model, Hz)
    constraints.check(model, Hz)

    du = n + Hz * l
    d = du + N * m
    if d > max_vars:
        raise ValueError(f"{d} decision variables exceeds the oracle limit of {max_vars}")

    Phi = _state_maps(model, Hz)
    Hmat = np.zeros((d, d))
    q = np.zeros(d)
    Hmat[:n, :n] = weights.P
    q[:n] = -weights.P @ model.xbar0
    for k in range(Hz):
        sl = slice(n + k * l, n + (k + 1) * l)
        Hmat[sl, sl] += weights.Q
    for k in range(1, N + 1):
        J = np.zeros((m, d))
        J[:, :du] = model.C @ Phi[k]
        J[:, du + (k - 1) * m : du + k * m] = np.eye(m)
        Hmat += J.T @ weights.R @ J
        q -= J.T @ weights.R @ y[k - 1]

    eye = np.eye(N * m)
    tube = np.hstack([np.zeros((N * m, du)), eye])
    eps = np.tile(weights.eps, N)
    rows = [tube, -tube]
    rhs = [eps, eps]
    p = constraints.p
    if p:
        D = np.zeros((p, d))
        for k in range(1, Hz + 1):
            D[:, :du] += constraints.U[k - 1] @ Phi[k]
        for k in range(Hz):
            D[:, n + k * l : n + (k + 1) * l] += constraints.V[k]
        rows.append(D)
        rhs.append(constraints.a)
    sol = solve_ineq_qp(QpProblem(Hmat, q, np.vstack(rows), np.concatenate(rhs)), tol=tol)
    if sol.status == INFEASIBLE:
        raise InfeasibleConstraints("primal constraint set is empty")
    if not sol.converged:
        raise SolverError(f"primal active-set solve stopped: {sol.status}, residual {sol.kkt_residual:.3g}")

    u = sol.z[:du]
    eta = sol.z[du:].reshape(N, m)
    xhat = Phi @ u
    what = u[n:].reshape(Hz, l)
    vhat = y - xhat[1 : N + 1] @ model.C.T
    theta = (vhat - eta) @ weights.R.T
    mu = sol.multipliers
    gamma, beta, xi = mu[: N * m], mu[N * m : 2 * N * m], mu[2 * N * m :]
    _, _, lam = reconstruct(model, weights, theta, xi, constraints, Hz)

    Theta = theta.ravel()
    ops = stack_operators(model, weights, y, constraints, Hz)
    dual = DualSolution(
        Theta=Theta,
        zeta=np.abs(Theta),
        xi=xi,
        gamma=gamma,
        beta=beta,
        dual_objective=_dual_objective(ops.T, ops.Y, ops.eps, ops.offset, Theta, xi),
        diagnostics=sol,
    )
    obj = primal_objective(model, weights, y, xhat, what, eta)
    return EstimateResult(xhat, what, eta, lam, vhat, obj, dual)


def objective_value(model: SystemModel, weights: WeightSpec, measurements, result: EstimateResult,
                    horizon: Optional[int] = None) -> float:
    """Primal objective of ``result``; the disturbance sum runs over
    ``w_0..w_{horizon-1}`` (default: every disturbance in the result)."""
    Hz = result.what.shape[0] if horizon is None else int(horizon)
    return primal_objective(model, weights, measurements, result.xhat, result.what[:Hz], result.eta)


@dataclass
class KktReport:
    stationarity_residuals: dict
    complementary_slackness_max: float
    primal_feasibility_max: float
    dual_feasibility_min: float
    split_residual: float
    tol: float
    scale: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(
            max(self.stationarity_residuals.values(), default=0.0) <= self.tol
            and self.complementary_slackness_max <= self.tol
            and self.primal_feasibility_max <= self.tol
            and self.dual_feasibility_min >= -self.tol
            and self.split_residual <= self.tol
        )

    def summary(self) -> str:
        worst = max(self.stationarity_residuals.items(), key=lambda kv: kv[1], default=("none", 0.0))
        return (
            f"passed={self.passed} worst stationarity {worst[0]}={worst[1]:.2e} "
            f"compl={self.complementary_slackness_max:.2e} feas={self.primal_feasibility_max:.2e} "
            f"dualmin={self.dual_feasibility_min:.2e} split={self.split_residual:.2e}"
        )


def _maxabs(a):
    a = np.asarray(a)
    return float(np.max(np.abs(a))) if a.size else 0.0


def check_kkt(model: SystemModel, weights: WeightSpec, measurements, constraints: Optional[ConstraintSet],
              result: EstimateResult, tol: float = 1e-6) -> KktReport:
    """Audit an estimate against the optimality conditions of its problem.

    Every residual is divided by ``1 + s`` where ``s`` is the largest magnitude
    among data, states, costates and multipliers (products of two such
    quantities by ``(1 + s)**2``), so ``tol`` is relative.
    """
    if result.dual is None:
        raise MissingDual("result carries no dual variables to audit")
    model, weights = validate_model(model, weights, strict_eps=False)
    y = _measurement_rows(model, measurements)
    A, B, C = model.A, model.B, model.C
    P, Q, R = weights.P, weights.Q, weights.R
    N, m = y.shape
    Hz = result.horizon
    if constraints is None:
        constraints = ConstraintSet.empty(model, Hz)
    constraints.check(model, Hz)

    dual = result.dual
    theta = dual.Theta.reshape(N, m)
    gamma = dual.gamma.reshape(N, m)
    beta = dual.beta.reshape(N, m)
    xi = dual.xi
    x, w, eta, lam = result.xhat, result.what, result.eta, result.lam
    eps = weights.eps

    s = 1.0 + max(_maxabs(y), _maxabs(x), _maxabs(w), _maxabs(lam), _maxabs(dual.Theta), _maxabs(xi))

    state = []
    for k in range(1, Hz + 1):
        rhs = A.T @ lam[k] - constraints.U[k - 1].T @ xi
        if k <= N:
            rhs = rhs + C.T @ R @ (y[k - 1] - eta[k - 1]) - C.T @ R @ C @ x[k]
        state.append(lam[k - 1] - rhs)
    stat = {
        "state": _maxabs(state),
        "initial_state": _maxabs(P @ (x[0] - model.xbar0) - A.T @ lam[0]),
        "terminal": _maxabs(lam[Hz]),
        "disturbance": _maxabs([Q @ w[k] - B.T @ lam[k] + constraints.V[k].T @ xi for k in range(Hz)]),
        "eta": _maxabs(R @ eta.T - R @ (y - x[1 : N + 1] @ C.T).T + theta.T),
        "dynamics": _maxabs(x[1:] - x[:-1] @ A.T - w @ B.T),
    }
    stat = {k: v / s for k, v in stat.items()}

    cons_slack = constraints.residual(x, w)
    compl = max(
        _maxabs(gamma * (eps - eta)),
        _maxabs(beta * (eps + eta)),
        _maxabs(xi * cons_slack),
    ) / s**2
    feas = max(
        float(np.max(np.abs(eta) - eps, initial=0.0)),
        float(np.max(-cons_slack, initial=0.0)),
        0.0,
    ) / s
    dual_min = min(
        float(np.min(dual.gamma, initial=0.0)),
        float(np.min(dual.beta, initial=0.0)),
        float(np.min(xi, initial=0.0)),
    ) / s
    split = max(
        _maxabs(dual.gamma - dual.beta - dual.Theta),
        _maxabs(dual.gamma + dual.beta - np.abs(dual.Theta)),
        _maxabs(dual.zeta - np.abs(dual.Theta)),
    ) / s
    return KktReport(stat, compl, feas, dual_min, split, tol, s)


@dataclass
class Instance:
    model: SystemModel
    weights: WeightSpec
    measurements: np.ndarray
    constraints: Optional[ConstraintSet]
    j: Optional[int]
    kind: str  # "none", "slack" or "active"

    @property
    def horizon(self) -> int:
        return self.measurements.shape[0] + (self.j or 0)


def _random_pd(rng, size):
    G = rng.standard_normal((size, size))
    return G.T @ G + 0.1 * np.eye(size)


def random_instance(seed: int, *, n_max: int = 3, l_max: int = 2, m_max: int = 2, N_max: int = 8,
                    constraints: str = "random", j: Optional[int] = None,
                    eps_range=(0.1, 2.0)) -> Instance:
    """Seeded random problem for cross-route checks.

    ``constraints`` is ``"none"``, ``"slack"`` (rows inactive at the
    unconstrained optimum), ``"active"`` (rows cutting it) or ``"random"``
    (half slack, half active).
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, n_max + 1))
    l = int(rng.integers(1, l_max + 1))
    m = int(rng.integers(1, m_max + 1))
    N = int(rng.integers(2, N_max + 1))

    A = rng.standard_normal((n, n))
    rho = max(abs(np.linalg.eigvals(A)))
    A *= rng.uniform(0.5, 1.05) / max(rho, 1e-9)
    model = SystemModel(A, rng.standard_normal((n, l)), rng.standard_normal((m, n)), rng.standard_normal(n))
    weights = WeightSpec(_random_pd(rng, n), _random_pd(rng, l), _random_pd(rng, m),
                         rng.uniform(*eps_range, size=m))

    x = model.xbar0 + rng.standard_normal(n)
    ys = []
    for _ in range(N):
        x = A @ x + model.B @ rng.standard_normal(l)
        ys.append(model.C @ x + 1.5 * rng.standard_normal(m))
    y = np.array(ys)

    kind = constraints
    if kind == "random":
        kind = "slack" if rng.random() < 0.5 else "active"
    cons = None
    if kind in ("slack", "active"):
        Hz = N + (j or 0)
        p = int(rng.integers(1, 4))
        U = np.zeros((Hz, p, n))
        V = np.zeros((Hz, p, l))
        for r in range(p):
            for k in rng.choice(np.arange(1, Hz + 1), size=min(Hz, int(rng.integers(1, 4))), replace=False):
                U[k - 1, r] = rng.standard_normal(n)
            if rng.random() < 0.5:
                V[int(rng.integers(0, Hz)), r] = rng.standard_normal(l)
        free = primal_brute_force(model, weights, y, None, j)
        probe = ConstraintSet(Hz, U, V, np.zeros(p))
        level = -probe.residual(free.xhat, free.what)
        delta = rng.uniform(0.2, 1.0, size=p) * (1.0 + np.abs(level))
        a = level + delta if kind == "slack" else level - delta
        cons = ConstraintSet(Hz, U, V, a)
    elif kind != "none":
        raise ValueError(f"unknown constraint mode {constraints!r}")
    return Instance(model, weights, y, cons, j, kind)
