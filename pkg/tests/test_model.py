import numpy as np
import pytest

from epsmooth import (
    SECTION4_X0,
    DimensionMismatch,
    NoiseSpec,
    NonPositiveEpsilon,
    NotPositiveDefinite,
    SystemModel,
    WeightSpec,
    section4_model,
    section4_noise,
    section4_weights,
    simulate,
    simulate_saturated,
    standard_normals,
    validate_model,
)


def test_benchmark_system_accepted():
    m, w = validate_model(section4_model(), section4_weights())
    assert (m.n, m.l, m.m) == (2, 1, 1)
    assert w.eps.tolist() == [5.0]


def test_b_rows_mismatch():
    m = SystemModel(np.eye(2), np.ones((3, 1)), [[1.0, 0.0]], [0.0, 0.0])
    with pytest.raises(DimensionMismatch, match="B"):
        validate_model(m, section4_weights())


def test_c_columns_mismatch():
    m = SystemModel(np.eye(2), [[1.0], [0.0]], [[1.0, 0.0, 0.0]], [0.0, 0.0])
    with pytest.raises(DimensionMismatch, match="C"):
        validate_model(m, section4_weights())


def test_zero_r_rejected():
    w = WeightSpec(np.eye(2), [[1.0]], [[0.0]], [5.0])
    with pytest.raises(NotPositiveDefinite, match="R"):
        validate_model(section4_model(), w)


def test_asymmetric_p_rejected():
    w = WeightSpec([[1.0, 0.5], [0.0, 1.0]], [[1.0]], [[1.0]], [5.0])
    with pytest.raises(NotPositiveDefinite, match="P"):
        validate_model(section4_model(), w)


@pytest.mark.parametrize("eps", [0.0, -1.0])
def test_eps_must_be_positive(eps):
    with pytest.raises(NonPositiveEpsilon):
        validate_model(section4_model(), section4_weights(eps))


def test_eps_zero_allowed_when_not_strict():
    _, w = validate_model(section4_model(), section4_weights(0.0), strict_eps=False)
    assert w.eps.tolist() == [0.0]


def test_scalar_eps_broadcasts():
    m = SystemModel(np.eye(2), np.eye(2), np.eye(2), [0.0, 0.0])
    _, w = validate_model(m, WeightSpec(np.eye(2), np.eye(2), np.eye(2), 0.3))
    assert w.eps.tolist() == [0.3, 0.3]


def test_inputs_are_frozen():
    m = section4_model()
    with pytest.raises(ValueError):
        m.A[0, 0] = 5.0


def test_zero_noise_open_loop():
    m = section4_model()
    x0 = np.array([-1.0, 1.0])
    tr = simulate(m, x0, np.zeros((6, 1)), np.zeros((6, 1)))
    for k in range(7):
        expect = np.linalg.matrix_power(m.A, k) @ x0
        assert np.allclose(tr.states[k], expect, atol=1e-13)
        if k:
            assert np.allclose(tr.measurements[k - 1], m.C @ expect, atol=1e-13)


def test_unit_accumulate():
    m = SystemModel([[1.0]], [[1.0]], [[1.0]], [0.0])
    tr = simulate(m, [0.0], [1.0, 0.0], [0.0, 0.0])
    assert tr.states.ravel().tolist() == [0.0, 1.0, 1.0]
    assert tr.measurements.ravel().tolist() == [1.0, 1.0]


def test_length_mismatch():
    with pytest.raises(DimensionMismatch):
        simulate(section4_model(), SECTION4_X0, np.zeros((3, 1)), np.zeros((4, 1)))


def test_benchmark_recursions_hold():
    m = section4_model()
    near = 0
    for seed in range(10):
        w, v = section4_noise(NoiseSpec(seed=seed), 20)
        tr = simulate(m, SECTION4_X0, w, v)
        x = tr.states
        assert np.max(np.abs(x[1:] - x[:-1] @ m.A.T - w @ m.B.T)) < 1e-12
        assert np.max(np.abs(tr.measurements - x[1:] @ m.C.T - v)) < 1e-12
        near += np.any(np.abs(x[1:, 1] - 4.0) < 1.0)
    assert near > 0


def test_saturation_clips_second_state():
    m = section4_model()
    w, v = section4_noise(NoiseSpec(seed=3), 20)
    tr = simulate_saturated(m, SECTION4_X0, w, v, 1, 4.0)
    free = simulate(m, SECTION4_X0, w, v)
    assert np.all(tr.states[:, 1] <= 4.0)
    # the two runs coincide up to the first overshoot, so a clip happens iff the free run overshoots
    assert tr.saturated == bool(np.any(free.states[:, 1] > 4.0))
    # wherever no clip happened the linear step holds
    lin = tr.states[:-1] @ m.A.T + w @ m.B.T
    unclipped = lin[:, 1] <= 4.0
    assert np.allclose(tr.states[1:][unclipped], lin[unclipped], atol=1e-12)


def test_deterministic_bias():
    spec = NoiseSpec(gauss_scale_w=0, sin_amp_w=0, gauss_scale_v=0, sin_amp_v=0, bias_v=-4, seed=11)
    w, v = section4_noise(spec, 9)
    assert np.all(w == 0.0)
    assert np.all(v == -4.0)


def test_sinusoid_terms_exact():
    spec = NoiseSpec(gauss_scale_w=0, sin_amp_w=4, gauss_scale_v=0, sin_amp_v=4, bias_v=0)
    w, v = section4_noise(spec, 4)
    # w_0..w_3 at k=0..3, v_1..v_4 at k=1..4
    assert w.ravel().tolist() == [0.0, 4.0, 0.0, -4.0]
    assert v.ravel().tolist() == [4.0, 0.0, -4.0, 0.0]


def test_same_seed_replays():
    a = section4_noise(NoiseSpec(seed=42), 20)
    b = section4_noise(NoiseSpec(seed=42), 20)
    c = section4_noise(NoiseSpec(seed=43), 20)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert not np.array_equal(a[0], c[0])


def test_normals_box_muller_reference():
    # Box-Muller written out by hand on the raw uniform stream
    u = np.random.Generator(np.random.PCG64(5)).random(4)
    r1 = np.sqrt(-2.0 * np.log(1.0 - u[0]))
    r2 = np.sqrt(-2.0 * np.log(1.0 - u[2]))
    expect = [r1 * np.cos(2 * np.pi * u[1]), r1 * np.sin(2 * np.pi * u[1]), r2 * np.cos(2 * np.pi * u[3])]
    assert np.allclose(standard_normals(5, 3), expect, rtol=1e-14, atol=0)


def test_normals_moments():
    z = standard_normals(2024, 200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1.0) < 0.01
    assert abs(np.mean(z**4) - 3.0) < 0.05


def test_weights_inverse_and_scaling():
    w = WeightSpec([[2.0, 0.5], [0.5, 1.0]], [[4.0]], [[0.25]], [1.0])
    assert np.allclose(w.Pinv @ w.P, np.eye(2), atol=1e-14)
    assert np.allclose(w.Rinv, [[4.0]])
    s = w.scaled(3.0)
    assert np.allclose(s.Q, [[12.0]]) and s.eps.tolist() == [1.0]
