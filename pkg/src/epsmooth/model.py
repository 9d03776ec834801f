"""Linear system description, weights, simulation and the benchmark noise model.

Indexing follows one convention everywhere in the package: states are
``x_0 .. x_N`` (array rows ``0..N``), measurements ``y_1 .. y_N`` (array rows
``0..N-1`` hold ``y_1..y_N``), disturbances ``w_0 .. w_{N-1}``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, NonPositiveEpsilon, NotPositiveDefinite

__all__ = [
    "SystemModel",
    "WeightSpec",
    "Trajectory",
    "NoiseSpec",
    "validate_model",
    "simulate",
    "simulate_saturated",
    "standard_normals",
    "section4_noise",
    "section4_model",
    "section4_weights",
    "SECTION4_X0",
]


def _frozen(a, ndim):
    arr = np.array(a, dtype=float)
    if ndim == 2:
        arr = np.atleast_2d(arr)
    else:
        arr = np.atleast_1d(arr).ravel()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SystemModel:
    """Time-invariant system ``x_{k+1} = A x_k + B w_k``, ``y_k = C x_k + v_k``.

    A one-dimensional ``B`` is read as a column, a one-dimensional ``C`` as a
    row, so ``B=[0.5, 2]`` and ``C=[1, 0]`` describe a single-input,
    single-output system.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    xbar0: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        object.__setattr__(self, "A", _frozen(self.A, 2))
        object.__setattr__(self, "B", _frozen(B, 2))
        object.__setattr__(self, "C", _frozen(self.C, 2))
        object.__setattr__(self, "xbar0", _frozen(self.xbar0, 1))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def l(self) -> int:  # noqa: E743
        return self.B.shape[1]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    def with_prior(self, xbar0) -> "SystemModel":
        return SystemModel(self.A, self.B, self.C, xbar0)


def _cho_inverse(M):
    c = linalg.cho_factor(M, lower=True)
    inv = linalg.cho_solve(c, np.eye(M.shape[0]))
    return 0.5 * (inv + inv.T)


@dataclass(frozen=True)
class WeightSpec:
    """Weights on the initial-state error (P), disturbances (Q) and
    measurement misfit (R), plus the per-channel tube half-width ``eps``."""

    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    eps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "P", _frozen(self.P, 2))
        object.__setattr__(self, "Q", _frozen(self.Q, 2))
        object.__setattr__(self, "R", _frozen(self.R, 2))
        object.__setattr__(self, "eps", _frozen(self.eps, 1))

    @cached_property
    def Pinv(self):
        return _cho_inverse(self.P)

    @cached_property
    def Qinv(self):
        return _cho_inverse(self.Q)

    @cached_property
    def Rinv(self):
        return _cho_inverse(self.R)

    def scaled(self, c: float) -> "WeightSpec":
        return WeightSpec(c * self.P, c * self.Q, c * self.R, self.eps)

    def with_eps(self, eps) -> "WeightSpec":
        return WeightSpec(self.P, self.Q, self.R, eps)


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray  # (K+1, n): x_0..x_K
    measurements: np.ndarray  # (K, m): y_1..y_K
    disturbances: np.ndarray  # (K, l): w_0..w_{K-1}
    noises: np.ndarray  # (K, m): v_1..v_K
    saturated: bool = False


@dataclass(frozen=True)
class NoiseSpec:
    """Sinusoid-plus-Gaussian disturbance and noise generator.

    ``w_k = gauss_scale_w * r1_k + sin_amp_w * sin(pi k / 2)`` and
    ``v_k = gauss_scale_v * r2_k + sin_amp_v * sin(pi k / 2) + bias_v``.
    The defaults reproduce the benchmark example.
    """

    gauss_scale_w: float = 4.0
    sin_amp_w: float = 4.0
    gauss_scale_v: float = 4.0
    sin_amp_v: float = 4.0
    bias_v: float = -4.0
    seed: int = 0


def _check_pd(name, M, size):
    if M.shape != (size, size):
        raise DimensionMismatch(f"{name} must be {size}x{size}, got {M.shape[0]}x{M.shape[1]}")
    if not np.all(np.isfinite(M)):
        raise NotPositiveDefinite(f"{name} has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > 1e-12 * scale:
        raise NotPositiveDefinite(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(f"{name} is not positive definite") from None


def validate_model(model: SystemModel, weights: WeightSpec, *, strict_eps: bool = True):
    """Check shapes and definiteness of a (model, weights) pair.

    Returns the pair unchanged, except that a single-entry ``eps`` is
    broadcast to every output channel. ``strict_eps=False`` admits
    ``eps == 0`` (the plain quadratic-loss limit), which only the brute-force
    primal oracle accepts.
    """
    A, B, C, x = model.A, model.B, model.C, model.xbar0
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"A must be square, got {A.shape}")
    n = A.shape[0]
    if n < 1 or B.shape[1] < 1 or C.shape[0] < 1:
        raise DimensionMismatch("n, l and m must all be at least 1")
    if B.shape[0] != n:
        raise DimensionMismatch(f"B must have {n} rows, got {B.shape[0]}")
    if C.shape[1] != n:
        raise DimensionMismatch(f"C must have {n} columns, got {C.shape[1]}")
    if x.shape != (n,):
        raise DimensionMismatch(f"xbar0 must have length {n}, got {x.shape[0]}")

    _check_pd("P", weights.P, n)
    _check_pd("Q", weights.Q, model.l)
    _check_pd("R", weights.R, model.m)

    eps = weights.eps
    if eps.shape[0] == 1 and model.m > 1:
        weights = weights.with_eps(np.full(model.m, eps[0]))
        eps = weights.eps
    if eps.shape != (model.m,):
        raise DimensionMismatch(f"eps must have length {model.m}, got {eps.shape[0]}")
    if not np.all(np.isfinite(eps)):
        raise NonPositiveEpsilon("eps has non-finite entries")
    if strict_eps and np.any(eps <= 0):
        raise NonPositiveEpsilon("eps must be strictly positive in every channel")
    if np.any(eps < 0):
        raise NonPositiveEpsilon("eps must be nonnegative")
    return model, weights


def _as_rows(seq, width, name):
    arr = np.asarray(seq, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None] if width == 1 else arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != width:
        raise DimensionMismatch(f"{name} must have rows of length {width}, got shape {arr.shape}")
    return arr


def simulate(model: SystemModel, x0, w, v) -> Trajectory:
    """Run the recursions forward from ``x0`` with the given exogenous inputs.

    ``w`` holds ``w_0..w_{K-1}`` and ``v`` holds ``v_1..v_K``.
    """
    return _simulate(model, x0, w, v, None)


def simulate_saturated(model: SystemModel, x0, w, v, index: int, upper: float) -> Trajectory:
    """Like :func:`simulate` but clips state component ``index`` at ``upper``
    after every update, modelling an actuator or storage saturation.

    The linear state recursion only holds on steps where the clip is inactive.
    """
    return _simulate(model, x0, w, v, (index, upper))


def _simulate(model, x0, w, v, saturation):
    w = _as_rows(w, model.l, "w")
    v = _as_rows(v, model.m, "v")
    if w.shape[0] != v.shape[0]:
        raise DimensionMismatch(f"w and v lengths differ: {w.shape[0]} vs {v.shape[0]}")
    K = w.shape[0]
    if K < 1:
        raise DimensionMismatch("at least one step is required")
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape != (model.n,):
        raise DimensionMismatch(f"x0 must have length {model.n}")

    x = np.empty((K + 1, model.n))
    x[0] = x0
    clipped = False
    for k in range(K):
        x[k + 1] = model.A @ x[k] + model.B @ w[k]
        if saturation is not None:
            i, top = saturation
            if x[k + 1, i] > top:
                x[k + 1, i] = top
                clipped = True
    y = x[1:] @ model.C.T + v
    return Trajectory(states=x, measurements=y, disturbances=w, noises=v, saturated=clipped)


def standard_normals(seed: int, count: int) -> np.ndarray:
    """Portable standard normal stream.

    Uniform doubles come from PCG64 seeded with the 64-bit ``seed``
    (``(next_uint64 >> 11) * 2**-53``, numpy's ``Generator.random``). They are
    consumed in pairs ``(u1, u2)`` and mapped by Box-Muller,
    ``r = sqrt(-2 log(1 - u1))``, emitting ``r cos(2 pi u2)`` then
    ``r sin(2 pi u2)``.
    """
    pairs = (count + 1) // 2
    gen = np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))
    u = gen.random(2 * pairs).reshape(pairs, 2)
    r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    ang = 2.0 * np.pi * u[:, 1]
    z = np.column_stack([r * np.cos(ang), r * np.sin(ang)]).ravel()
    return z[:count]


_QUARTER_SINE = np.array([0.0, 1.0, 0.0, -1.0])


def _sin_half_pi(k):
    return _QUARTER_SINE[np.asarray(k) % 4]


def section4_noise(spec: NoiseSpec, K: int):
    """Return ``(w, v)`` of shapes ``(K, 1)``: ``w_0..w_{K-1}`` and ``v_1..v_K``.

    The first ``K`` normals of the stream are ``r1_0..r1_{K-1}``, the next
    ``K`` are ``r2_1..r2_K``.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    r = standard_normals(spec.seed, 2 * K)
    r1, r2 = r[:K], r[K:]
    kw = np.arange(K)
    kv = np.arange(1, K + 1)
    w = spec.gauss_scale_w * r1 + spec.sin_amp_w * _sin_half_pi(kw)
    v = spec.gauss_scale_v * r2 + spec.sin_amp_v * _sin_half_pi(kv) + spec.bias_v
    return w[:, None], v[:, None]


SECTION4_X0 = np.array([-1.0, 1.0])


def section4_model() -> SystemModel:
    return SystemModel(
        A=[[1.0, 1.0], [-0.2, 0.4]],
        B=[[0.5], [2.0]],
        C=[[1.0, 0.0]],
        xbar0=[0.0, 0.0],
    )


def section4_weights(eps: float = 5.0) -> WeightSpec:
    return WeightSpec(P=np.eye(2), Q=[[1.0]], R=[[1.0]], eps=[eps])
