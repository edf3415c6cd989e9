import numpy as np
import pytest

from fdsampler.datasets import two_region_image, two_region_true_mask
from fdsampler.denoisers import GmmDenoiser, isotropic_gmm
from fdsampler.layers import (MASK_CEIL, MASK_FLOOR, VAR_FLOOR, LayerConfig,
                              fit_pixel_gaussians, infer_layers,
                              layer_inpaint_estimates, sample_binary_mask,
                              update_mask)
from fdsampler.linalg import make_rng
from fdsampler.schedule import make_linear_schedule


def test_fit_pixel_gaussians_hand_example():
    # two estimates {0, 2} per pixel: mean 1, unbiased variance 2
    mean, var = fit_pixel_gaussians([np.zeros(4), np.full(4, 2.0)])
    assert np.allclose(mean, 1.0)
    assert np.allclose(var, 2.0)


def test_fit_pixel_gaussians_variance_floor():
    mean, var = fit_pixel_gaussians([np.ones(3), np.ones(3)])
    assert np.allclose(mean, 1.0)
    assert np.allclose(var, VAR_FLOOR)
    # a single estimate has no spread information; variance is floored too
    _, var1 = fit_pixel_gaussians([np.ones(3)])
    assert np.allclose(var1, VAR_FLOOR)


def test_update_mask_equal_layers_gives_half():
    x = np.array([0.1, 0.5, 0.9])
    mu = np.array([0.5, 0.5, 0.5])
    v = np.full(3, 0.01)
    m = update_mask(x, mu, v, mu, v)
    assert np.allclose(m, 0.5)


def test_update_mask_prefers_closer_layer_and_clamps():
    x = np.array([0.0, 1.0])
    mu1 = np.array([0.0, 0.0])
    mu2 = np.array([1.0, 1.0])
    v = np.full(2, 0.001)
    m = update_mask(x, mu1, v, mu2, v)
    assert m[0] == MASK_CEIL  # strongly layer 1, clamped
    assert m[1] == MASK_FLOOR


def test_sample_binary_mask():
    rng = make_rng(31)
    m = np.full(1000, 0.9)
    b = sample_binary_mask(m, rng)
    assert set(np.unique(b)) <= {0.0, 1.0}
    assert 0.85 <= b.mean() <= 0.95
    with pytest.raises(ValueError):
        sample_binary_mask(np.array([0.0, 0.5]), rng)
    with pytest.raises(ValueError):
        sample_binary_mask(np.array([0.5, 1.0]), rng)


def test_layer_config_validation():
    with pytest.raises(ValueError):
        LayerConfig(iterations=0)
    with pytest.raises(ValueError):
        LayerConfig(samples_per_layer=0)
    with pytest.raises(ValueError):
        LayerConfig(perturb_sigma=-0.1)


def _toy_setup():
    sched = make_linear_schedule(200)
    den = GmmDenoiser(isotropic_gmm([1.0], [np.full(9, 0.5)], [0.3]), sched)
    x0 = np.full(9, 0.5)
    return sched, den, x0


def test_inpaint_estimates_identical_without_perturbation():
    sched, den, x0 = _toy_setup()
    cfg = LayerConfig(iterations=1, samples_per_layer=3, mini_steps=3, inner_iters=1)
    mask = np.array([1, 1, 1, 1, 0, 0, 0, 0, 0], dtype=float)
    ests = layer_inpaint_estimates(den, sched, x0, mask, 3, 0.0, make_rng(32), cfg)
    assert len(ests) == 3
    assert np.array_equal(ests[0], ests[1])
    assert np.array_equal(ests[0], ests[2])


def test_inpaint_estimates_vary_with_perturbation():
    sched, den, x0 = _toy_setup()
    cfg = LayerConfig(iterations=1, samples_per_layer=3, mini_steps=3, inner_iters=1)
    mask = np.array([1, 1, 1, 1, 0, 0, 0, 0, 0], dtype=float)
    ests = layer_inpaint_estimates(den, sched, x0, mask, 3, 0.3, make_rng(33), cfg)
    assert not np.array_equal(ests[0], ests[1])
    # observed pixels stay close to the input under the constraint
    assert np.max(np.abs(np.stack(ests)[:, :4] - 0.5)) < 0.3


def test_inpaint_estimates_unconstrained_when_nothing_observed():
    sched, den, x0 = _toy_setup()
    cfg = LayerConfig(iterations=1, samples_per_layer=2, mini_steps=3, inner_iters=1)
    ests = layer_inpaint_estimates(den, sched, x0, np.zeros(9), 2, 0.1, make_rng(34), cfg)
    assert len(ests) == 2
    assert all(np.all(np.isfinite(e)) for e in ests)


def test_infer_layers_separates_two_regions():
    # Same construction as the acceptance experiment, fewer rounds: the mask
    # should still recover the two constant regions.
    sched = make_linear_schedule(1000)
    img = two_region_image()
    true_mask = two_region_true_mask()
    den1 = GmmDenoiser(isotropic_gmm([1.0], [np.full(256, 0.2)], [0.1]), sched)
    den2 = GmmDenoiser(isotropic_gmm([1.0], [np.full(256, 0.8)], [0.1]), sched)
    cfg = LayerConfig(iterations=3, samples_per_layer=3, mini_steps=3, inner_iters=2)
    res = infer_layers((den1, den2), sched, img, cfg, make_rng(35))
    assert len(res.rounds) == 3
    assert res.mask.min() >= MASK_FLOOR and res.mask.max() <= MASK_CEIL
    hard = res.mask >= 0.5
    accuracy = max(float(np.mean(hard == (true_mask > 0.5))),
                   float(np.mean(hard == (true_mask <= 0.5))))
    assert accuracy >= 0.95
    assert res.blend_rms() < 0.05
    # each layer reproduces the input on the pixels it owns
    assert np.array_equal(res.layer1[hard], img[hard])
    assert np.array_equal(res.layer2[~hard], img[~hard])
