"""Constrained sampling from diffusion priors with Newton-style guidance.

The update direction -J e (J the denoiser Jacobian, e the constraint
error) is approximated with two denoiser forward passes and no
backpropagation; exact-Jacobian oracles and analytic Gaussian posteriors
back every numerical claim in the test suite.
"""

from .schedule import (NoiseSchedule, DdimCoeffs, make_linear_schedule,
                       forward_noise, ddim_coefficients, ddim_step, timestep_grid)
from .denoisers import (GmmPrior, GmmDenoiser, LinearDenoiser, MlpDenoiser,
                        MlpTrainConfig, CountingDenoiser, isotropic_gmm,
                        train_mlp_denoiser, heldout_denoising_loss,
                        exact_jacobian, jvp_exact, vjp_exact, save_mlp, load_mlp)
from .operators import (MeasurementOp, Identity, Mask, Downsample, Compose,
                        Measurement, synthesize_measurement, make_freeform_mask,
                        complement_indices)
from .guidance import (GuidanceConfig, DirectionResult, NEWTON_FD, NEWTON_EXACT,
                       BACKPROP_EXACT, error_vector, newton_direction_fd,
                       newton_direction_exact, backprop_direction,
                       compute_direction, direction_divergence, constraint_cost)
from .sampler import (SamplerConfig, RunTrace, constrained_sample,
                      warm_restart_sample, dps_baseline_sample)
from .layers import LayerConfig, LayerResult, infer_layers
from .diagnostics import (psnr, mse, constraint_residual, jacobian_symmetry_probe,
                          direction_compare_experiment, asymmetry_score)
from .linalg import make_rng, SpdMatrix

__version__ = "0.1.0"
