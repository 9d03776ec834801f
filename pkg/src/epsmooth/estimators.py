"""Quadratic-loss and epsilon-insensitive smoothers, constrained estimator,
predictor and a moving-horizon driver.

Every estimate is reconstructed from the optimal dual multipliers through the
backward costate recursion

    lambda_{k-1} = A' lambda_k + C' theta_k - U_k' xi,   lambda_H = 0

(the ``C' theta_k`` term only for measured steps ``k <= N``), followed by
``w_k = Q^{-1}(B' lambda_k - V_k' xi)``, ``x_0 = xbar0 + P^{-1} A' lambda_0``
and forward propagation of the state.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .errors import InfeasibleConstraints, SolverError
from .model import SystemModel, WeightSpec, validate_model
from .operators import ConstraintSet, _measurement_rows, build_M, build_Y, stack_operators
from .qpcore import DEFAULT_MAX_ITER, DEFAULT_TOL, UNBOUNDED, QpProblem, QpSolution, _find_feasible, solve_nonneg_qp

__all__ = [
    "DualSolution",
    "EstimateResult",
    "MovingHorizonStep",
    "h2_smooth",
    "eps_smooth",
    "eps_smooth_constrained",
    "eps_predict",
    "moving_horizon",
    "primal_objective",
    "reconstruct",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DualSolution:
    Theta: np.ndarray  # (N*m,) stacked theta_1..theta_N
    zeta: np.ndarray
    xi: np.ndarray  # (p,)
    gamma: np.ndarray
    beta: np.ndarray
    dual_objective: float
    diagnostics: Optional[QpSolution] = None

    @property
    def converged(self) -> bool:
        return self.diagnostics is None or self.diagnostics.converged


@dataclass(frozen=True)
class EstimateResult:
    xhat: np.ndarray  # (H+1, n)
    what: np.ndarray  # (H, l)
    eta: np.ndarray  # (N, m)
    lam: np.ndarray  # (H+1, n): lambda_0..lambda_H
    vhat: np.ndarray  # (N, m): y_k - C xhat_k
    primal_objective: float
    dual: Optional[DualSolution] = None

    @property
    def N(self) -> int:
        return self.eta.shape[0]

    @property
    def horizon(self) -> int:
        return self.what.shape[0]

    @property
    def converged(self) -> bool:
        return self.dual is None or self.dual.converged


def primal_objective(model, weights, measurements, xhat, what, eta) -> float:
    """Half the weighted sum of initial-state error, disturbance energy and
    the part of the measurement misfit lying outside the tube (``eta``)."""
    y = _measurement_rows(model, measurements)
    N = y.shape[0]
    d0 = xhat[0] - model.xbar0
    e = y - xhat[1 : N + 1] @ model.C.T - eta
    total = d0 @ weights.P @ d0
    total += np.einsum("ki,ij,kj->", what, weights.Q, what)
    total += np.einsum("ki,ij,kj->", e, weights.R, e)
    return 0.5 * float(total)


def reconstruct(model: SystemModel, weights: WeightSpec, theta, xi, constraints: ConstraintSet, horizon: int):
    """Costate, disturbance and state trajectories from the multipliers.

    ``theta`` is ``(N, m)``; returns ``(xhat, what, lam)``.
    """
    A, B, C = model.A, model.B, model.C
    N = theta.shape[0]
    Hz = horizon
    lam = np.zeros((Hz + 1, model.n))
    for k in range(Hz, 0, -1):
        nxt = A.T @ lam[k] - constraints.U[k - 1].T @ xi
        if k <= N:
            nxt = nxt + C.T @ theta[k - 1]
        lam[k - 1] = nxt
    what = np.empty((Hz, model.l))
    for k in range(Hz):
        what[k] = weights.Qinv @ (B.T @ lam[k] - constraints.V[k].T @ xi)
    xhat = np.empty((Hz + 1, model.n))
    xhat[0] = model.xbar0 + weights.Pinv @ (A.T @ lam[0])
    for k in range(Hz):
        xhat[k + 1] = A @ xhat[k] + B @ what[k]
    return xhat, what, lam


def h2_smooth(model: SystemModel, weights: WeightSpec, measurements) -> EstimateResult:
    """Fixed-interval quadratic-loss smoother.

    Solves ``M Theta = Y`` by Cholesky and runs the costate/state recursions;
    identical to the classical two-point boundary value smoother.
    ``weights.eps`` is ignored.
    """
    model, weights = validate_model(model, weights, strict_eps=False)
    y = _measurement_rows(model, measurements)
    N, m = y.shape
    M = build_M(model, weights, N)
    Y = build_Y(model, y)
    Theta = linalg.cho_solve(linalg.cho_factor(M, lower=True), Y)
    theta = Theta.reshape(N, m)
    xhat, what, lam = reconstruct(model, weights, theta, np.zeros(0), ConstraintSet.empty(model, N), N)
    eta = np.zeros((N, m))
    vhat = y - xhat[1:] @ model.C.T
    obj = primal_objective(model, weights, y, xhat, what, eta)
    return EstimateResult(xhat, what, eta, lam, vhat, obj, None)


def _split_qp(T, Y, eps, offset):
    """Nonnegative QP in ``(gamma, beta, xi)`` with ``Theta = gamma - beta``."""
    Nm = Y.shape[0]
    Ttt, Ttx, Txx = T[:Nm, :Nm], T[:Nm, Nm:], T[Nm:, Nm:]
    Hq = np.block([
        [Ttt, -Ttt, Ttx],
        [-Ttt, Ttt, -Ttx],
        [Ttx.T, -Ttx.T, Txx],
    ])
    q = np.concatenate([eps - Y, eps + Y, offset])
    return QpProblem(Hq, q)


def _dual_objective(T, Y, eps, offset, Theta, xi):
    v = np.concatenate([Theta, xi])
    return float(-0.5 * v @ T @ v - eps @ np.abs(Theta) + Theta @ Y - xi @ offset)


def _check_feasible(ops, constraints, model):
    """Primal feasibility of the extra constraint rows in ``(x_0, w)``."""
    if constraints.p == 0:
        return
    Nm = ops.Y.shape[0]
    sumUA = -ops.H[Nm:]
    D = np.hstack([sumUA, ops.G.T + ops.V])
    if _find_feasible(D, constraints.a) is None:
        raise InfeasibleConstraints("no trajectory satisfies the supplied constraint rows")


def _dual_estimate(model, weights, measurements, constraints, horizon, tol, max_iter):
    model, weights = validate_model(model, weights)
    y = _measurement_rows(model, measurements)
    N, m = y.shape
    if constraints is None:
        constraints = ConstraintSet.empty(model, horizon)
    ops = stack_operators(model, weights, y, constraints, horizon)
    _check_feasible(ops, constraints, model)

    problem = _split_qp(ops.T, ops.Y, ops.eps, ops.offset)
    Nm = N * m
    pairs = np.vstack([np.arange(Nm), np.arange(Nm, 2 * Nm)])
    sol = solve_nonneg_qp(problem, tol=tol, max_iter=max_iter, opposite_pairs=pairs)
    if sol.status == UNBOUNDED:
        raise InfeasibleConstraints(
            f"dual multipliers grew without bound (|z|={np.max(sol.z):.3g}); constraints look infeasible"
        )
    if not sol.converged:
        log.warning("dual QP stopped after %d iterations with KKT residual %.3g", sol.iterations, sol.kkt_residual)

    gamma, beta, xi = sol.z[:Nm], sol.z[Nm : 2 * Nm], sol.z[2 * Nm :]
    Theta = gamma - beta
    theta = Theta.reshape(N, m)
    xhat, what, lam = reconstruct(model, weights, theta, xi, constraints, horizon)
    vhat = y - xhat[1 : N + 1] @ model.C.T
    eta = vhat - theta @ weights.Rinv.T

    slack = np.max(np.abs(eta) - weights.eps) if eta.size else 0.0
    eta_tol = 1e-6 * (1.0 + float(np.max(np.abs(y))))
    if sol.converged and slack > eta_tol:
        raise SolverError(f"tube slack exceeds eps by {slack:.3g} at a converged dual solution")

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


def eps_smooth(model: SystemModel, weights: WeightSpec, measurements,
               tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> EstimateResult:
    """Fixed-interval smoother with the epsilon-insensitive quadratic loss.

    Misfits inside the tube ``|y_k - C x_k| <= eps`` cost nothing. The dual
    variable ``theta_k`` is zero for every channel strictly inside the tube.
    """
    y = _measurement_rows(model, measurements)
    return _dual_estimate(model, weights, y, None, y.shape[0], tol, max_iter)


def eps_smooth_constrained(model: SystemModel, weights: WeightSpec, measurements, constraints: ConstraintSet,
                           tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> EstimateResult:
    """Epsilon-insensitive smoother subject to
    ``sum U_k x_k + sum V_k w_k <= a`` over the measured horizon.

    Raises :class:`InfeasibleConstraints` if no trajectory satisfies the rows.
    """
    y = _measurement_rows(model, measurements)
    return _dual_estimate(model, weights, y, constraints, y.shape[0], tol, max_iter)


def eps_predict(model: SystemModel, weights: WeightSpec, measurements, constraints: Optional[ConstraintSet], j: int,
                tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> EstimateResult:
    """Estimate ``x_0..x_{N+j}`` from ``y_1..y_N``; constraints span ``N + j`` steps.

    The prediction is ``result.xhat[-1]``. Without constraints the costate
    vanishes on the future segment, so the prediction is the open-loop
    propagation of the filtered state.
    """
    if j < 1:
        raise ValueError("prediction lead j must be at least 1")
    y = _measurement_rows(model, measurements)
    return _dual_estimate(model, weights, y, constraints, y.shape[0] + j, tol, max_iter)


@dataclass(frozen=True)
class MovingHorizonStep:
    time: int
    filtered: np.ndarray
    predicted: Optional[np.ndarray]
    result: EstimateResult


def moving_horizon(model: SystemModel, weights: WeightSpec, measurement_stream, window: int,
                   constraints_builder: Optional[Callable[[int, np.ndarray, int], Optional[ConstraintSet]]] = None,
                   j: Optional[int] = None, tol: float = DEFAULT_TOL,
                   max_iter: int = DEFAULT_MAX_ITER) -> list[MovingHorizonStep]:
    """Re-solve on the most recent ``window`` measurements at each time.

    At time ``t`` the batch covers ``y_{t-window+1}..y_t`` and states
    ``x_{t-window}..x_t``. The prior mean for ``x_{t-window}`` is the previous
    window's estimate of that state (the first window keeps
    ``model.xbar0``); ``P`` is reused unchanged.

    ``constraints_builder(start, y_window, horizon)`` may return rows
    expressed in window-local indices, where ``start = t - window`` is the
    absolute time of the window's first state. With ``j`` set, each window
    also predicts ``x_{t+j}``.
    """
    if window < 1:
        raise ValueError("window must be at least 1")
    y = _measurement_rows(model, measurement_stream)
    T = y.shape[0]
    W = min(window, T)
    steps = []
    prior = model.xbar0
    for t in range(W, T + 1):
        start = t - W
        yw = y[start:t]
        local = model.with_prior(prior)
        horizon = W + (j or 0)
        cons = constraints_builder(start, yw, horizon) if constraints_builder else None
        if j:
            res = eps_predict(local, weights, yw, cons, j, tol=tol, max_iter=max_iter)
        elif cons is not None:
            res = eps_smooth_constrained(local, weights, yw, cons, tol=tol, max_iter=max_iter)
        else:
            res = eps_smooth(local, weights, yw, tol=tol, max_iter=max_iter)
        steps.append(MovingHorizonStep(
            time=t,
            filtered=res.xhat[W].copy(),
            predicted=res.xhat[-1].copy() if j else None,
            result=res,
        ))
        # the next window starts one step later
        prior = res.xhat[1].copy()
    return steps
