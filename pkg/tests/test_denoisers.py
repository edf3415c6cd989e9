import numpy as np
import pytest

from fdsampler.datasets import make_grid_dataset
from fdsampler.denoisers import (CountingDenoiser, GmmDenoiser, GmmPrior, LinearDenoiser,
                                 MlpTrainConfig, SpdMatrix, exact_jacobian,
                                 gmm_posterior_mean, gmm_score, heldout_denoising_loss,
                                 isotropic_gmm, jvp_exact, load_mlp, save_mlp,
                                 train_mlp_denoiser, vjp_exact)
from fdsampler.experiments import default_fixture_path
from fdsampler.linalg import make_rng
from fdsampler.schedule import NoiseSchedule, make_linear_schedule


def quadrature_posterior_mean_1d(weights, means, scales, ab, x_t):
    """Independent oracle: E[x0 | x_t] by dense numerical quadrature."""
    x0 = np.linspace(-8.0, 8.0, 400_001)
    prior = np.zeros_like(x0)
    for w, mu, s in zip(weights, means, scales):
        prior += w * np.exp(-0.5 * ((x0 - mu) / s) ** 2) / (s * np.sqrt(2 * np.pi))
    lik = np.exp(-0.5 * (x_t - np.sqrt(ab) * x0) ** 2 / (1 - ab))
    post = prior * lik
    return float(np.trapezoid(x0 * post, x0) / np.trapezoid(post, x0))


def test_gmm_posterior_mean_matches_quadrature_oracle():
    weights, means, scales = [0.3, 0.7], [-1.0, 1.0], [0.1, 0.4]
    sched = NoiseSchedule(alpha_bar=np.array([1.0, 0.5]), eta=0.0)
    prior = isotropic_gmm(weights, [[m] for m in means], scales)
    for x_t in [-2.0, 0.0, 0.3, 1.7]:
        oracle = quadrature_posterior_mean_1d(weights, means, scales, 0.5, x_t)
        got = gmm_posterior_mean(prior, sched, np.array([x_t]), 1)[0]
        assert got == pytest.approx(oracle, abs=1e-8)


def test_single_gaussian_posterior_closed_form():
    # Prior N(mu, s^2 I): x0_hat = mu + s^2 sqrt(ab)/(ab s^2 + 1 - ab) (x_t - sqrt(ab) mu)
    rng = make_rng(4)
    mu = rng.standard_normal(3)
    s = 0.7
    sched = make_linear_schedule(100)
    prior = isotropic_gmm([1.0], [mu], [s])
    den = GmmDenoiser(prior, sched)
    for t in [1, 40, 100]:
        ab = sched.alpha_bar[t]
        x_t = rng.standard_normal(3)
        gain = s * s * np.sqrt(ab) / (ab * s * s + 1 - ab)
        expect = mu + gain * (x_t - np.sqrt(ab) * mu)
        assert np.allclose(den(x_t, t), expect, atol=1e-12)


def test_standard_normal_prior_shrinks_by_sqrt_alpha_bar():
    # Prior N(0, I): noised covariance is I, so x0_hat = sqrt(ab) x_t;
    # at ab = 0.64 that is 0.8 x_t.
    sched = NoiseSchedule(alpha_bar=np.array([1.0, 0.64]), eta=0.0)
    den = GmmDenoiser(isotropic_gmm([1.0], [[0.0, 0.0]], [1.0]), sched)
    x_t = np.array([1.0, -2.0])
    assert np.allclose(den(x_t, 1), 0.8 * x_t, atol=1e-12)


def test_tweedie_identity():
    # x0_hat = (x_t + (1 - ab) * score) / sqrt(ab), to 1e-8 * (1 + ||x||)
    rng = make_rng(5)
    sched = make_linear_schedule(200)
    prior = isotropic_gmm([0.25, 0.25, 0.5],
                          rng.standard_normal((3, 4)), [0.3, 0.5, 0.8])
    den = GmmDenoiser(prior, sched)
    for t in [1, 50, 120, 200]:
        x_t = 2.0 * rng.standard_normal(4)
        ab = sched.alpha_bar[t]
        lhs = den(x_t, t)
        rhs = (x_t + (1 - ab) * den.score(x_t, t)) / np.sqrt(ab)
        assert np.linalg.norm(lhs - rhs) <= 1e-8 * (1 + np.linalg.norm(x_t))
        assert np.allclose(gmm_score(prior, sched, x_t, t), den.score(x_t, t))


def test_gmm_jacobian_is_symmetric():
    rng = make_rng(6)
    sched = make_linear_schedule(200)
    prior = isotropic_gmm([0.5, 0.5], rng.standard_normal((2, 5)), [0.4, 0.6])
    den = GmmDenoiser(prior, sched)
    j = exact_jacobian(den, rng.standard_normal(5), 80)
    assert np.linalg.norm(j - j.T) <= 1e-6 * np.linalg.norm(j)


def test_gmm_prior_validation():
    with pytest.raises(ValueError):
        isotropic_gmm([0.5, 0.6], [[0.0], [1.0]], [0.1, 0.1])  # weights sum > 1
    with pytest.raises(ValueError):
        GmmPrior(weights=np.array([1.0]), means=np.zeros((1, 2)),
                 covs=(SpdMatrix(np.eye(3)),))
    with pytest.raises(ValueError):
        GmmDenoiser(isotropic_gmm([1.0], [[0.0]], [1.0]),
                    make_linear_schedule(10))(np.zeros(1), 11)


def test_linear_denoiser_oracles():
    m = np.array([[1.0, 1.0], [0.0, 1.0]])
    den = LinearDenoiser(m, bias=np.array([0.1, -0.2]))
    x = np.array([2.0, 3.0])
    assert np.allclose(den(x, 5), m @ x + [0.1, -0.2])
    assert np.allclose(exact_jacobian(den, x, 5), m)
    v = np.array([1.0, -1.0])
    assert np.allclose(jvp_exact(den, x, 5, v), m @ v)
    assert np.allclose(vjp_exact(den, x, 5, v), m.T @ v)
    with pytest.raises(ValueError):
        LinearDenoiser(np.ones((2, 3)))


def test_exact_jacobian_fd_fallback_matches_linear_map():
    # A denoiser without an analytic Jacobian still gets an accurate one.
    class Cubic:
        dim = 2

        def __call__(self, x, t):
            return np.asarray(x, dtype=float) ** 3

    x = np.array([0.5, -1.2])
    j = exact_jacobian(Cubic(), x, 1)
    assert np.allclose(j, np.diag(3 * x**2), atol=1e-7)


def test_counting_denoiser_accounts_calls():
    den = CountingDenoiser(LinearDenoiser(np.eye(2)))
    x = np.zeros(2)
    den(x, 1)
    den(x, 1)
    den.vjp(x, 1, np.ones(2))
    assert den.forwards == 2
    assert den.vjps == 1


def test_fixture_model_regression(fixture_model, sched1000):
    # Held-out denoising loss of the shipped grid model, pinned at build time.
    assert fixture_model.dim == 256
    holdout = make_grid_dataset(rng=make_rng(123))[:64]
    loss = heldout_denoising_loss(fixture_model, holdout, sched1000, make_rng(321))
    assert loss <= 0.33


def test_fixture_model_jvp_matches_forward_difference(fixture_model):
    rng = make_rng(7)
    x = rng.standard_normal(256)
    v = rng.standard_normal(256)
    got = fixture_model.jvp(x, 500, v) if hasattr(fixture_model, "jvp") \
        else jvp_exact(fixture_model, x, 500, v)
    d = 1e-6
    fd = (fixture_model(x + d * v, 500) - fixture_model(x - d * v, 500)) / (2 * d)
    assert np.linalg.norm(got - fd) <= 1e-4 * (1 + np.linalg.norm(fd))


def test_training_memorizes_a_repeated_point():
    # A dataset of one repeated point trains to x0_hat ~= x* even at large t.
    rng = make_rng(8)
    x_star = np.array([0.5, -0.25, 0.75, 0.0])
    dataset = np.tile(x_star, (64, 1))
    sched = make_linear_schedule(1000)
    cfg = MlpTrainConfig(hidden=(64, 64), steps=5000, batch_size=64,
                         learning_rate=2e-3)
    model = train_mlp_denoiser(dataset, sched, cfg, rng)
    for _ in range(5):
        x_t = rng.standard_normal(4)
        assert np.max(np.abs(model(x_t, 1000) - x_star)) <= 0.1


def test_training_rejects_bad_heldout_loss():
    rng = make_rng(9)
    dataset = rng.standard_normal((64, 3))
    sched = make_linear_schedule(50)
    cfg = MlpTrainConfig(hidden=(8,), steps=20, batch_size=16, loss_threshold=1e-9)
    with pytest.raises(ValueError, match="held-out"):
        train_mlp_denoiser(dataset, sched, cfg, rng)


def test_save_load_roundtrip(tmp_path):
    rng = make_rng(10)
    dataset = rng.standard_normal((32, 3))
    sched = make_linear_schedule(50)
    model = train_mlp_denoiser(dataset, sched,
                               MlpTrainConfig(hidden=(8,), steps=20, batch_size=16), rng)
    path = tmp_path / "model.bin"
    save_mlp(model, path)
    loaded = load_mlp(path)
    x = rng.standard_normal(3)
    assert np.array_equal(model(x, 25), loaded(x, 25))
