"""Stacked matrices of the dual programs and encoders for linear constraints.

Block conventions: measurement blocks are ordered ``y_1..y_N``, disturbance
blocks ``w_0..w_{H-1}`` where ``H`` is the constraint horizon (``N`` for
smoothing, ``N + j`` for ``j``-step prediction).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch
from .model import SystemModel, WeightSpec

__all__ = [
    "ConstraintSet",
    "StackedOperators",
    "PredictionOperators",
    "build_F",
    "build_Y",
    "build_M",
    "build_GVH",
    "build_T",
    "build_prediction_operators",
    "observability_stack",
    "eps_stack",
    "constraint_offset",
    "stack_operators",
    "encode_constraint_family",
    "combine_constraints",
    "CONSTRAINT_KINDS",
]


@dataclass(frozen=True)
class ConstraintSet:
    """Rows of ``sum_{k=1}^{H} U_k x_k + sum_{k=0}^{H-1} V_k w_k <= a``.

    ``U[k-1]`` holds ``U_k`` and ``V[k]`` holds ``V_k``; both have ``p`` rows.
    """

    horizon: int
    U: np.ndarray  # (H, p, n)
    V: np.ndarray  # (H, p, l)
    a: np.ndarray  # (p,)

    def __post_init__(self):
        U = np.asarray(self.U, dtype=float)
        V = np.asarray(self.V, dtype=float)
        a = np.atleast_1d(np.asarray(self.a, dtype=float)).ravel()
        if U.ndim != 3 or V.ndim != 3:
            raise DimensionMismatch("U and V must be stacks of matrices")
        if U.shape[0] != self.horizon or V.shape[0] != self.horizon:
            raise DimensionMismatch(
                f"expected {self.horizon} U and V blocks, got {U.shape[0]} and {V.shape[0]}"
            )
        if U.shape[1] != a.shape[0] or V.shape[1] != a.shape[0]:
            raise DimensionMismatch("U, V and a disagree on the number of rows")
        for arr in (U, V, a):
            arr.flags.writeable = False
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "a", a)

    @property
    def p(self) -> int:
        return self.a.shape[0]

    @classmethod
    def empty(cls, model: SystemModel, horizon: int) -> "ConstraintSet":
        return cls(horizon, np.zeros((horizon, 0, model.n)), np.zeros((horizon, 0, model.l)), np.zeros(0))

    def check(self, model: SystemModel, horizon: int) -> None:
        if self.horizon != horizon:
            raise DimensionMismatch(f"constraint horizon {self.horizon} != required {horizon}")
        if self.U.shape[2] != model.n or self.V.shape[2] != model.l:
            raise DimensionMismatch("constraint blocks do not match the model's n and l")

    def residual(self, xhat, what) -> np.ndarray:
        """``a - sum U_k x_k - sum V_k w_k``; nonnegative when satisfied."""
        lhs = np.einsum("kpn,kn->p", self.U, xhat[1 : self.horizon + 1])
        lhs = lhs + np.einsum("kpl,kl->p", self.V, what[: self.horizon])
        return self.a - lhs


class StackedOperators(NamedTuple):
    F: np.ndarray  # Nm x Hl (zero-padded beyond N blocks)
    Y: np.ndarray
    Rinv: np.ndarray
    Qinv: np.ndarray
    eps: np.ndarray
    T: np.ndarray  # (Nm+p) x (Nm+p); equals M when p == 0 and H == N
    G: np.ndarray  # Hl x p
    V: np.ndarray  # p x Hl
    H: np.ndarray  # (Nm+p) x n
    offset: np.ndarray  # a - sum U_i A^i xbar0


class PredictionOperators(NamedTuple):
    Fbar: np.ndarray
    Gbar: np.ndarray
    Vbar: np.ndarray
    Hbar: np.ndarray
    Qbar_inv: np.ndarray
    Tbar: np.ndarray


def _markov(model, count):
    """``C A^j B`` for ``j = 0..count-1``."""
    out = np.empty((count, model.m, model.l))
    AjB = model.B.copy()
    for j in range(count):
        out[j] = model.C @ AjB
        AjB = model.A @ AjB
    return out


def build_F(model: SystemModel, N: int) -> np.ndarray:
    """Block lower-triangular Toeplitz map from ``w_0..w_{N-1}`` to ``C x_1..C x_N``."""
    if N < 1:
        raise ValueError("N must be at least 1")
    m, l = model.m, model.l
    h = _markov(model, N)
    F = np.zeros((N * m, N * l))
    for i in range(N):
        for k in range(i + 1):
            F[i * m : (i + 1) * m, k * l : (k + 1) * l] = h[i - k]
    return F


def observability_stack(model: SystemModel, N: int) -> np.ndarray:
    """``[C A; C A^2; ...; C A^N]``."""
    out = np.empty((N * model.m, model.n))
    CAk = model.C @ model.A
    for k in range(N):
        out[k * model.m : (k + 1) * model.m] = CAk
        CAk = CAk @ model.A
    return out


def _measurement_rows(model, measurements):
    y = np.asarray(measurements, dtype=float)
    if y.ndim == 1:
        y = y[:, None] if model.m == 1 else y[None, :]
    if y.ndim != 2 or y.shape[1] != model.m or y.shape[0] < 1:
        raise DimensionMismatch(f"measurements must be an (N, {model.m}) array with N >= 1")
    return y


def build_Y(model: SystemModel, measurements) -> np.ndarray:
    """Stacked ``y_k - C A^k xbar0`` for ``k = 1..N``."""
    y = _measurement_rows(model, measurements)
    N = y.shape[0]
    return y.ravel() - observability_stack(model, N) @ model.xbar0


def eps_stack(weights: WeightSpec, N: int) -> np.ndarray:
    return np.tile(weights.eps, N)


def _blockdiag(block, count):
    return np.kron(np.eye(count), block)


def build_M(model: SystemModel, weights: WeightSpec, N: int) -> np.ndarray:
    F = build_F(model, N)
    Om = observability_stack(model, N)
    FQ = F @ _blockdiag(weights.Qinv, N)
    M = FQ @ F.T + _blockdiag(weights.Rinv, N) + Om @ weights.Pinv @ Om.T
    return 0.5 * (M + M.T)


def _constraint_blocks(model, constraints, N):
    """G (Hl x p), stacked V (p x Hl) and H ((Nm+p) x n) for horizon H >= N.

    Uses ``S_H = U_H'``, ``S_r = U_r' + A' S_{r+1}`` so that block ``r`` of G
    is ``B' S_r`` and ``sum_i U_i A^i = S_1' A``.
    """
    Hz, p, n, l = constraints.horizon, constraints.p, model.n, model.l
    G = np.zeros((Hz * l, p))
    S = np.zeros((n, p))
    for r in range(Hz, 0, -1):
        S = constraints.U[r - 1].T + model.A.T @ S
        G[(r - 1) * l : r * l] = model.B.T @ S
    sumUA = S.T @ model.A
    Vstack = constraints.V.transpose(1, 0, 2).reshape(p, Hz * l)
    H = np.vstack([observability_stack(model, N), -sumUA])
    return G, Vstack, H, sumUA


def build_GVH(model: SystemModel, constraints: ConstraintSet, N: int):
    constraints.check(model, N)
    G, Vstack, H, _ = _constraint_blocks(model, constraints, N)
    return G, Vstack, H


def _assemble_T(F, G, Vstack, H, Qinv_blk, Rinv_blk, Pinv):
    left = np.vstack([F, -(G.T + Vstack)])
    T = left @ Qinv_blk @ left.T + H @ Pinv @ H.T
    Nm = Rinv_blk.shape[0]
    T[:Nm, :Nm] += Rinv_blk
    return 0.5 * (T + T.T)


def build_T(model: SystemModel, weights: WeightSpec, constraints: ConstraintSet, N: int) -> np.ndarray:
    constraints.check(model, N)
    G, Vstack, H, _ = _constraint_blocks(model, constraints, N)
    F = build_F(model, N)
    return _assemble_T(F, G, Vstack, H, _blockdiag(weights.Qinv, N), _blockdiag(weights.Rinv, N), weights.Pinv)


def build_prediction_operators(
    model: SystemModel, weights: WeightSpec, constraints: ConstraintSet, N: int, j: int
) -> PredictionOperators:
    if j < 1:
        raise ValueError("prediction lead j must be at least 1")
    constraints.check(model, N + j)
    F = build_F(model, N)
    Fbar = np.hstack([F, np.zeros((N * model.m, j * model.l))])
    Gbar, Vbar, Hbar, _ = _constraint_blocks(model, constraints, N)
    Qbar = _blockdiag(weights.Qinv, N + j)
    Tbar = _assemble_T(Fbar, Gbar, Vbar, Hbar, Qbar, _blockdiag(weights.Rinv, N), weights.Pinv)
    return PredictionOperators(Fbar, Gbar, Vbar, Hbar, Qbar, Tbar)


def constraint_offset(model: SystemModel, constraints: ConstraintSet) -> np.ndarray:
    """``a - sum_{i=1}^{H} U_i A^i xbar0``."""
    _, _, _, sumUA = _constraint_blocks(model, constraints, 0)
    return constraints.a - sumUA @ model.xbar0


def stack_operators(model, weights, measurements, constraints=None, horizon=None) -> StackedOperators:
    """Everything the dual program and reconstruction need, for any of the
    three problems (``constraints=None`` and ``horizon=N`` gives the plain
    smoothing case where ``T == M``)."""
    y = _measurement_rows(model, measurements)
    N = y.shape[0]
    Hz = N if horizon is None else int(horizon)
    if Hz < N:
        raise ValueError("horizon cannot be shorter than the measurement record")
    if constraints is None:
        constraints = ConstraintSet.empty(model, Hz)
    constraints.check(model, Hz)

    F = build_F(model, N)
    if Hz > N:
        F = np.hstack([F, np.zeros((N * model.m, (Hz - N) * model.l))])
    G, Vstack, H, sumUA = _constraint_blocks(model, constraints, N)
    Qinv = _blockdiag(weights.Qinv, Hz)
    Rinv = _blockdiag(weights.Rinv, N)
    T = _assemble_T(F, G, Vstack, H, Qinv, Rinv, weights.Pinv)
    return StackedOperators(
        F=F,
        Y=build_Y(model, y),
        Rinv=Rinv,
        Qinv=Qinv,
        eps=eps_stack(weights, N),
        T=T,
        G=G,
        V=Vstack,
        H=H,
        offset=constraints.a - sumUA @ model.xbar0,
    )


# -- constraint families -------------------------------------------------------

CONSTRAINT_KINDS = ("state_bound", "average_bound", "noise_bound", "increment_bound")


def _rowmat(L, n):
    L = np.atleast_2d(np.asarray(L, dtype=float))
    if L.shape[1] != n:
        raise DimensionMismatch(f"L must have {n} columns, got {L.shape[1]}")
    return L


def _vec(value, q, name):
    v = np.atleast_1d(np.asarray(value, dtype=float)).ravel()
    if v.shape[0] == 1 and q > 1:
        v = np.full(q, v[0])
    if v.shape[0] != q:
        raise DimensionMismatch(f"{name} must have length {q}, got {v.shape[0]}")
    return v


def _coeff_times(coeff, vec, q):
    c = np.asarray(coeff, dtype=float)
    if c.ndim == 0:
        out = c * vec
        return _vec(out, q, "bound") if out.shape[0] != q else out
    c = np.atleast_2d(c)
    if c.shape != (q, vec.shape[0]):
        raise DimensionMismatch(f"measurement coefficient must be {q}x{vec.shape[0]}")
    return c @ vec


def _need_y(params, model):
    if params.get("y") is None:
        raise ValueError("this constraint needs the measurement sequence under params['y']")
    return _measurement_rows(model, params["y"])


def _bound(spec, q, params, model, name):
    """A bound is a constant (scalar or q-vector) or
    ``{"mean_y": coeff, "offset": c}`` meaning ``coeff @ mean(y) + c``."""
    if isinstance(spec, dict):
        y = _need_y(params, model)
        out = _coeff_times(spec.get("mean_y", 0.0), y.mean(axis=0), q)
        return out + _vec(spec.get("offset", 0.0), q, name)
    return _vec(spec, q, name)


class _RowBuilder:
    def __init__(self, model, horizon):
        self.model = model
        self.horizon = horizon
        self.U, self.V, self.a = [], [], []

    def add(self, rhs, U_terms=(), V_terms=()):
        """One block of rows; ``U_terms`` are ``(k, matrix)`` with k in 1..H,
        ``V_terms`` are ``(k, matrix)`` with k in 0..H-1."""
        q = rhs.shape[0]
        U = np.zeros((self.horizon, q, self.model.n))
        V = np.zeros((self.horizon, q, self.model.l))
        for k, mat in U_terms:
            U[k - 1] += mat
        for k, mat in V_terms:
            V[k] += mat
        self.U.append(U)
        self.V.append(V)
        self.a.append(rhs)

    def build(self):
        if not self.a:
            return ConstraintSet.empty(self.model, self.horizon)
        return ConstraintSet(
            self.horizon, np.concatenate(self.U, axis=1), np.concatenate(self.V, axis=1), np.concatenate(self.a)
        )


def encode_constraint_family(kind: str, params: dict, model: SystemModel, horizon: int) -> ConstraintSet:
    """Translate a named constraint family into ``(U_k, V_k, a)`` rows.

    Kinds and their ``params``:

    ``state_bound``
        ``L x_k <= upper`` (and ``lower <= L x_k`` if given) for every
        ``k`` in ``steps`` (default ``1..horizon``). Per step the upper rows
        precede the lower rows.
    ``average_bound``
        ``lower <= (1/span) sum_{i=1}^{span} L x_i <= upper``; ``span``
        defaults to the number of measurements (or ``horizon``). Bounds may be
        ``{"mean_y": coeff, "offset": c}`` to depend on the measurements.
    ``noise_bound``
        ``|y_k - C x_k| <= bound`` for each measured step, encoded as the row
        pair ``-C x_k <= bound - y_k`` then ``C x_k <= bound + y_k``.
    ``increment_bound``
        ``L (x_{k+lag} - x_k) <= upper + y_coeff (y_{k+lag} - y_k)``, written
        through the dynamics as ``L (A^lag - I) x_k + sum_j L A^{lag-1-j} B
        w_{k+j}``. Optional ``lower`` adds the mirrored rows.

    Measurement-dependent bounds are evaluated here, so ``a`` is always a
    plain vector.
    """
    n = model.n
    rows = _RowBuilder(model, horizon)

    if kind == "state_bound":
        L = _rowmat(params["L"], n)
        q = L.shape[0]
        upper = params.get("upper")
        lower = params.get("lower")
        if upper is None and lower is None:
            raise ValueError("state_bound needs 'upper' and/or 'lower'")
        upper = None if upper is None else _bound(upper, q, params, model, "upper")
        lower = None if lower is None else _bound(lower, q, params, model, "lower")
        steps = params.get("steps") or range(1, horizon + 1)
        for k in steps:
            if not 1 <= k <= horizon:
                raise DimensionMismatch(f"state_bound step {k} outside 1..{horizon}")
            if upper is not None:
                rows.add(upper, U_terms=[(k, L)])
            if lower is not None:
                rows.add(-lower, U_terms=[(k, -L)])

    elif kind == "average_bound":
        L = _rowmat(params["L"], n)
        q = L.shape[0]
        default_span = horizon if params.get("y") is None else len(_need_y(params, model))
        span = int(params.get("span", default_span))
        if not 1 <= span <= horizon:
            raise DimensionMismatch(f"average span {span} outside 1..{horizon}")
        terms = [(k, L / span) for k in range(1, span + 1)]
        if params.get("upper") is not None:
            rows.add(_bound(params["upper"], q, params, model, "upper"), U_terms=terms)
        if params.get("lower") is not None:
            neg = [(k, -M) for k, M in terms]
            rows.add(-_bound(params["lower"], q, params, model, "lower"), U_terms=neg)

    elif kind == "noise_bound":
        y = _need_y(params, model)
        if y.shape[0] > horizon:
            raise DimensionMismatch("more measurements than the constraint horizon")
        c = _vec(params["bound"], model.m, "bound")
        for k in range(1, y.shape[0] + 1):
            rows.add(c - y[k - 1], U_terms=[(k, -model.C)])
            rows.add(c + y[k - 1], U_terms=[(k, model.C)])

    elif kind == "increment_bound":
        L = _rowmat(params["L"], n)
        q = L.shape[0]
        lag = int(params.get("lag", 1))
        if lag < 1:
            raise ValueError("lag must be at least 1")
        y_coeff = params.get("y_coeff")
        y = _need_y(params, model) if y_coeff is not None else None
        last = (y.shape[0] if y is not None else horizon) - lag
        Alag = np.linalg.matrix_power(model.A, lag)
        Ux = L @ (Alag - np.eye(n))
        Vw = [L @ np.linalg.matrix_power(model.A, lag - 1 - j) @ model.B for j in range(lag)]
        upper = params.get("upper")
        lower = params.get("lower")
        if upper is None and lower is None:
            raise ValueError("increment_bound needs 'upper' and/or 'lower'")
        for k in range(1, last + 1):
            shift = np.zeros(q) if y is None else _coeff_times(y_coeff, y[k + lag - 1] - y[k - 1], q)
            Vterms = [(k + j, Vw[j]) for j in range(lag)]
            if upper is not None:
                rows.add(_vec(upper, q, "upper") + shift, U_terms=[(k, Ux)], V_terms=Vterms)
            if lower is not None:
                rows.add(
                    -(_vec(lower, q, "lower") + shift),
                    U_terms=[(k, -Ux)],
                    V_terms=[(kk, -M) for kk, M in Vterms],
                )
    else:
        raise ValueError(f"unsupported constraint kind {kind!r}; expected one of {CONSTRAINT_KINDS}")

    return rows.build()


def combine_constraints(model: SystemModel, horizon: int, *sets: ConstraintSet) -> ConstraintSet:
    """Stack the rows of several constraint sets sharing a horizon."""
    sets = [s for s in sets if s is not None]
    for s in sets:
        s.check(model, horizon)
    if not sets:
        return ConstraintSet.empty(model, horizon)
    return ConstraintSet(
        horizon,
        np.concatenate([s.U for s in sets], axis=1),
        np.concatenate([s.V for s in sets], axis=1),
        np.concatenate([s.a for s in sets]),
    )
