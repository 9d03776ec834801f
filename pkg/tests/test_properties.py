"""Randomized invariants of the estimators (hypothesis-driven)."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from epsmooth import check_kkt, eps_predict, eps_smooth, eps_smooth_constrained, h2_smooth, random_instance

seeds = st.integers(0, 10_000)


def fit(inst, eps):
    w = inst.weights.with_eps(np.full(inst.model.m, eps))
    if eps == 0:
        return h2_smooth(inst.model, w, inst.measurements)
    return eps_smooth(inst.model, w, inst.measurements)


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(1e-2, 1e2))
def test_joint_weight_scaling(seed, c):
    inst = random_instance(seed, constraints="random")
    a = eps_smooth_constrained(inst.model, inst.weights, inst.measurements, inst.constraints)
    b = eps_smooth_constrained(inst.model, inst.weights.scaled(c), inst.measurements, inst.constraints)
    assert np.max(np.abs(a.xhat - b.xhat)) <= 1e-7 * (1 + np.max(np.abs(a.xhat)))


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(0.0, 3.0), st.floats(0.01, 3.0))
def test_hinge_gap_monotone_in_eps(seed, e1, step):
    # optimality at e1 and e2 = e1 + step gives sum h(|r_i|) nondecreasing,
    # h(t) = (t - e1)_+^2 - (t - e2)_+^2 increasing; scalar output, R = r I
    inst = random_instance(seed, m_max=1, constraints="none")
    e2 = e1 + step
    r1 = np.abs(fit(inst, e1).vhat)
    r2 = np.abs(fit(inst, e2).vhat)

    def h(t):
        return np.maximum(t - e1, 0) ** 2 - np.maximum(t - e2, 0) ** 2

    assert h(r1).sum() <= h(r2).sum() + 1e-7 * (1 + h(r2).sum())


@settings(max_examples=30, deadline=None)
@given(seeds, st.sampled_from([None, 1, 2, 3]))
def test_structural_identities(seed, j):
    inst = random_instance(seed, constraints="random", j=j)
    m = inst.model
    if j:
        res = eps_predict(m, inst.weights, inst.measurements, inst.constraints, j)
    else:
        res = eps_smooth_constrained(m, inst.weights, inst.measurements, inst.constraints)
    assert res.converged
    assert np.all(res.lam[-1] == 0.0)
    step = res.xhat[1:] - res.xhat[:-1] @ m.A.T - res.what @ m.B.T
    assert np.max(np.abs(step)) <= 1e-9 * (1 + np.max(np.abs(res.xhat)))
    assert np.all(np.abs(res.eta) <= inst.weights.eps + 1e-6)
    gap = abs(res.dual.dual_objective - res.primal_objective)
    assert gap <= 1e-6 * (1 + abs(res.primal_objective))
    assert check_kkt(m, inst.weights, inst.measurements, inst.constraints, res).passed


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_support_sparsity_on_slack(seed):
    inst = random_instance(seed, constraints="none")
    res = eps_smooth(inst.model, inst.weights, inst.measurements)
    theta = res.dual.Theta.reshape(res.eta.shape)
    inside = np.abs(res.eta) < inst.weights.eps - 1e-6
    assert np.all(np.abs(theta[inside]) <= 1e-8)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_support_sparsity_on_residual_diagonal_r(seed):
    # with diagonal R the residual and the slack leave the tube together
    inst = random_instance(seed, constraints="none")
    w = inst.weights
    w = type(w)(w.P, w.Q, np.diag(np.diag(w.R)), w.eps)
    res = eps_smooth(inst.model, w, inst.measurements)
    theta = res.dual.Theta.reshape(res.vhat.shape)
    inside = np.abs(res.vhat) < w.eps - 1e-6
    assert np.all(np.abs(theta[inside]) <= 1e-8)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_split_is_complementary(seed):
    inst = random_instance(seed, constraints="random")
    d = eps_smooth_constrained(inst.model, inst.weights, inst.measurements, inst.constraints).dual
    assert np.all(np.minimum(d.gamma, d.beta) == 0.0)
    assert np.array_equal(d.zeta, np.abs(d.Theta))


def test_rss_is_not_monotone_in_general():
    # the ordering above holds for the hinge gap, not for the plain sum of
    # squares: this scalar random walk fits tighter at eps = 0.5 than at 0
    inst = random_instance(1002, n_max=1, l_max=1, m_max=1, N_max=10, constraints="none")
    rss = [float(np.sum(fit(inst, e).vhat ** 2)) for e in (0.0, 0.5, 1.0, 2.0, 5.0)]
    assert np.any(np.diff(rss) < 0)
