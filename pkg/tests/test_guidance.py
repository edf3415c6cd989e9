import numpy as np
import pytest

from fdsampler.denoisers import GmmDenoiser, LinearDenoiser, isotropic_gmm, jvp_exact
from fdsampler.guidance import (BACKPROP_EXACT, DELTA_MAX, DELTA_MIN, NEWTON_EXACT,
                                NEWTON_FD, GuidanceConfig, backprop_direction,
                                compute_direction, constraint_cost, default_fd_step,
                                direction_divergence, error_vector,
                                newton_direction_exact, newton_direction_fd)
from fdsampler.linalg import make_rng
from fdsampler.operators import Downsample, Mask, Measurement
from fdsampler.schedule import make_linear_schedule


def test_error_vector_matches_dense_oracle():
    rng = make_rng(16)
    for op in [Mask([0, 2], 4), Downsample(2, 4, 4)]:
        a = op.as_matrix()
        x0 = rng.standard_normal(op.in_dim)
        y = rng.standard_normal(op.out_dim)
        assert np.allclose(error_vector(op, x0, y), a.T @ (a @ x0 - y), atol=1e-12)


def test_zero_error_returns_zero_direction_one_forward():
    den = LinearDenoiser(np.eye(3))
    res = newton_direction_fd(den, np.ones(3), 1, np.zeros(3))
    assert not np.any(res.h)
    assert res.forward_calls == 1
    assert res.vjp_calls == 0


def test_directions_on_hand_linear_model():
    # J = [[1, 1], [0, 1]]: -J e and -J^T e differ whenever e[1] != 0.
    m = np.array([[1.0, 1.0], [0.0, 1.0]])
    den = LinearDenoiser(m)
    x_t = np.array([0.3, -0.7])
    e = np.array([1.0, 2.0])
    newton = newton_direction_fd(den, x_t, 1, e)
    assert np.allclose(newton.h, -m @ e, atol=1e-9)  # = [-3, -2]
    assert newton.forward_calls == 2 and newton.vjp_calls == 0
    exact = newton_direction_exact(den, x_t, 1, e)
    assert np.allclose(exact.h, -m @ e, atol=1e-12)
    back = backprop_direction(den, x_t, 1, e)
    assert np.allclose(back.h, -m.T @ e, atol=1e-12)  # = [-1, -3]
    assert back.vjp_calls == 1


def test_fd_direction_matches_exact_jvp_on_gmm():
    rng = make_rng(17)
    sched = make_linear_schedule(200)
    den = GmmDenoiser(isotropic_gmm([0.5, 0.5], rng.standard_normal((2, 4)),
                                    [0.4, 0.6]), sched)
    x_t = rng.standard_normal(4)
    e = rng.standard_normal(4)
    fd = newton_direction_fd(den, x_t, 80, e).h
    exact = -jvp_exact(den, x_t, 80, e)
    assert np.linalg.norm(fd - exact) <= 1e-3 * (1 + np.linalg.norm(exact))


def test_backprop_matches_scalar_cost_gradient():
    # -J^T e is -(1/2) the gradient of C(x_t) = ||A x0_hat(x_t) - y||^2;
    # verify against a central difference of the scalar cost, tol 1e-5.
    rng = make_rng(18)
    sched = make_linear_schedule(200)
    den = GmmDenoiser(isotropic_gmm([0.3, 0.7], rng.standard_normal((2, 3)),
                                    [0.5, 0.5]), sched)
    op = Mask([0, 2], 3)
    y = rng.standard_normal(2)
    meas = Measurement(y=y, op=op)
    x_t = rng.standard_normal(3)
    t = 60
    e = error_vector(op, den(x_t, t), y)
    h = backprop_direction(den, x_t, t, e).h
    d = 1e-6
    grad = np.empty(3)
    for i in range(3):
        step = np.zeros(3)
        step[i] = d
        grad[i] = (constraint_cost(meas, den(x_t + step, t))
                   - constraint_cost(meas, den(x_t - step, t))) / (2 * d)
    assert np.allclose(h, -0.5 * grad, atol=1e-5)


def test_default_fd_step_clamped():
    assert default_fd_step(np.zeros(2), np.ones(2)) == pytest.approx(5e-5)
    assert default_fd_step(1e9 * np.ones(2), np.ones(2)) == DELTA_MAX
    assert default_fd_step(np.ones(2), 1e9 * np.ones(2)) == DELTA_MIN


def test_guidance_config_validation():
    with pytest.raises(ValueError):
        GuidanceConfig(kind="steepest")
    with pytest.raises(ValueError):
        GuidanceConfig(delta=0.0)
    with pytest.raises(ValueError):
        newton_direction_fd(LinearDenoiser(np.eye(2)), np.ones(2), 1,
                            np.ones(2), delta=-1.0)
    with pytest.raises(ValueError):
        newton_direction_fd(LinearDenoiser(np.eye(2)), np.ones(2), 1, np.ones(3))


def test_compute_direction_dispatch():
    den = LinearDenoiser(np.array([[2.0, 0.0], [0.0, 3.0]]))
    x = np.ones(2)
    e = np.array([1.0, 1.0])
    assert np.allclose(compute_direction(NEWTON_FD, den, x, 1, e).h, [-2.0, -3.0],
                       atol=1e-9)
    assert np.allclose(compute_direction(NEWTON_EXACT, den, x, 1, e).h, [-2.0, -3.0])
    assert np.allclose(compute_direction(BACKPROP_EXACT, den, x, 1, e).h, [-2.0, -3.0])
    with pytest.raises(ValueError):
        compute_direction("nope", den, x, 1, e)


def test_epsilon_scale():
    den = LinearDenoiser(np.eye(2))
    e = np.array([1.0, 0.0])
    res = newton_direction_fd(den, np.zeros(2), 1, e, epsilon_scale=0.5)
    assert np.allclose(res.h, [-0.5, 0.0], atol=1e-9)


def test_direction_divergence():
    a = np.array([1.0, 0.0])
    assert direction_divergence(a, 2 * a) == pytest.approx(1.0)
    assert direction_divergence(a, -a) == pytest.approx(-1.0)
    assert direction_divergence(a, np.array([0.0, 5.0])) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        direction_divergence(a, np.zeros(2))


def test_constraint_cost():
    meas = Measurement(y=np.array([1.0]), op=Mask([0], 2))
    assert constraint_cost(meas, np.array([3.0, 9.0])) == pytest.approx(4.0)
