"""Two-layer image decomposition driven by repeated masked inpainting.

Given an input x0 and one denoiser (prior) per layer, infer two layer
images and a soft blending mask m with x0 = m * x1 + (1 - m) * x2. Each
round samples a binary ownership mask from m, generates several inpainted
estimates per layer under its own prior, fits per-pixel Gaussians to the
estimates, and updates m from the per-pixel likelihood ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .guidance import GuidanceConfig
from .linalg import Array, gaussian_sample
from .operators import Mask, Measurement
from .sampler import SamplerConfig, _run_chain, RunTrace
from .denoisers import CountingDenoiser
from .schedule import (NoiseSchedule, ddim_coefficients, ddim_step,
                       forward_noise, timestep_grid)

MASK_FLOOR = 0.01
MASK_CEIL = 0.99
VAR_FLOOR = 1e-4


@dataclass
class LayerConfig:
    iterations: int = 10
    samples_per_layer: int = 5        # K images per layer per round
    t_probe: int | None = None        # default 0.5 * T
    perturb_sigma: float = 0.3        # x_t perturbation on unobserved pixels
    mini_steps: int = 4               # DDIM strides of each short inpainting run
    inner_iters: int = 3
    step_size: float = 1.0

    def __post_init__(self):
        if self.iterations < 1 or self.samples_per_layer < 1:
            raise ValueError("iterations and samples_per_layer must be >= 1")
        if self.perturb_sigma < 0:
            raise ValueError("perturb_sigma must be >= 0")


@dataclass
class LayerRound:
    iteration: int
    blend_rms: float
    mean_mask: float


@dataclass
class LayerResult:
    layer1: np.ndarray
    layer2: np.ndarray
    mask: np.ndarray
    rounds: list[LayerRound]

    def blend_rms(self) -> float:
        return self.rounds[-1].blend_rms


def sample_binary_mask(m: Array, rng: np.random.Generator) -> Array:
    """Independent Bernoulli(m_i) draw per pixel."""
    m = np.asarray(m, dtype=float)
    if np.any(m <= 0) or np.any(m >= 1):
        raise ValueError("soft mask values must lie strictly inside (0, 1)")
    return (rng.random(m.shape) < m).astype(float)


def fit_pixel_gaussians(estimates) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel sample mean and unbiased variance (floored) of K estimates."""
    est = np.stack([np.asarray(e, dtype=float) for e in estimates])
    mean = est.mean(axis=0)
    if est.shape[0] >= 2:
        var = est.var(axis=0, ddof=1)
    else:
        var = np.zeros_like(mean)
    return mean, np.maximum(var, VAR_FLOOR)


def update_mask(x0_input: Array, mu1: Array, v1: Array, mu2: Array, v2: Array) -> Array:
    """Per-pixel responsibility of layer 1, in log-space, clamped.

    m_i = N(x_i; mu1_i, v1_i) / (N(x_i; mu1_i, v1_i) + N(x_i; mu2_i, v2_i))
    """
    x = np.asarray(x0_input, dtype=float)
    log1 = -0.5 * ((x - mu1) ** 2 / v1 + np.log(v1))
    log2 = -0.5 * ((x - mu2) ** 2 / v2 + np.log(v2))
    # sigmoid of the log-likelihood gap, stable for large gaps
    m = expit(log1 - log2)
    return np.clip(m, MASK_FLOOR, MASK_CEIL)


def layer_inpaint_estimates(den, sched: NoiseSchedule, x0_input: Array,
                            binary_mask: Array, k: int, perturb_sigma: float,
                            rng: np.random.Generator, cfg: LayerConfig | None = None):
    """K inpainted estimates of x0 under den, observing pixels where mask==1.

    All estimates share one base noising of the input to t_probe; variety
    comes solely from perturbing x_t on unobserved pixels, so
    perturb_sigma = 0 yields K identical estimates. Each estimate runs a
    short deterministic (eta = 0) constrained chain from t_probe to 0.
    """
    cfg = cfg or LayerConfig()
    x0_input = np.asarray(x0_input, dtype=float)
    binary_mask = np.asarray(binary_mask, dtype=float)
    if k < 1:
        raise ValueError("k must be >= 1")
    observed = np.flatnonzero(binary_mask > 0.5)
    unobserved = np.flatnonzero(binary_mask <= 0.5)
    t_probe = cfg.t_probe if cfg.t_probe is not None else sched.T // 2

    det_sched = NoiseSchedule(alpha_bar=sched.alpha_bar, eta=0.0)
    grid = timestep_grid(t_probe, min(cfg.mini_steps, t_probe))
    inner = SamplerConfig(steps=max(cfg.mini_steps, 1), inner_iters=cfg.inner_iters,
                          step_size=cfg.step_size, guidance=GuidanceConfig())

    base_eps = gaussian_sample(rng, x0_input.shape)
    x_t_base = forward_noise(x0_input, t_probe, sched, eps=base_eps)

    if observed.size > 0:
        meas = Measurement(y=x0_input[observed], op=Mask(observed, x0_input.size))
    else:
        # nothing observed for this layer this round: unconstrained denoise
        meas = None

    estimates = []
    for _ in range(k):
        x_t = x_t_base.copy()
        if perturb_sigma > 0 and unobserved.size > 0:
            x_t[unobserved] += perturb_sigma * gaussian_sample(rng, unobserved.size)
        if meas is None:
            x = x_t
            for t, t_next in grid:
                x = ddim_step(x, den(x, t), ddim_coefficients(det_sched, t, t - t_next))
            estimates.append(x)
        else:
            counted = CountingDenoiser(den)
            trace = RunTrace()
            x0 = _run_chain(counted, det_sched, meas, inner, rng, x_t, grid, trace)
            estimates.append(x0)
    return estimates


def infer_layers(den_pair, sched: NoiseSchedule, x0_input: Array,
                 cfg: LayerConfig, rng: np.random.Generator) -> LayerResult:
    """Alternate mask sampling, per-layer inpainting, and mask updates.

    Final layer images are the per-layer means with the input overwritten
    on pixels each layer owns under the hard (0.5-thresholded) mask.
    """
    den1, den2 = den_pair
    x0_input = np.asarray(x0_input, dtype=float)
    n = x0_input.size
    m = np.clip(rng.random(n), MASK_FLOOR, MASK_CEIL)

    rounds = []
    mu1 = mu2 = x0_input
    for it in range(cfg.iterations):
        b = sample_binary_mask(m, rng)
        est1 = layer_inpaint_estimates(den1, sched, x0_input, b,
                                       cfg.samples_per_layer, cfg.perturb_sigma, rng, cfg)
        est2 = layer_inpaint_estimates(den2, sched, x0_input, 1.0 - b,
                                       cfg.samples_per_layer, cfg.perturb_sigma, rng, cfg)
        mu1, v1 = fit_pixel_gaussians(est1)
        mu2, v2 = fit_pixel_gaussians(est2)
        m = update_mask(x0_input, mu1, v1, mu2, v2)

        hard = m >= 0.5
        x1 = np.where(hard, x0_input, mu1)
        x2 = np.where(~hard, x0_input, mu2)
        recon = m * x1 + (1.0 - m) * x2
        rms = float(np.sqrt(np.mean((x0_input - recon) ** 2)))
        rounds.append(LayerRound(iteration=it, blend_rms=rms, mean_mask=float(m.mean())))

    hard = m >= 0.5
    layer1 = np.where(hard, x0_input, mu1)
    layer2 = np.where(~hard, x0_input, mu2)
    return LayerResult(layer1=layer1, layer2=layer2, mask=m, rounds=rounds)
