"""Noise schedule, forward noising, and DDIM step coefficients.

The schedule stores the cumulative signal-retention fractions alpha_bar[t]
for t = 0..T with alpha_bar[0] = 1. A DDIM transition from t to t-s is

    x_{t-s} = zeta * x_t + kappa * x0_hat + beta * z,   z ~ N(0, I)

with coefficients chosen so the Gaussian marginals stay consistent with
the forward process for an exact denoiser.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import Array, gaussian_sample


@dataclass(frozen=True)
class NoiseSchedule:
    alpha_bar: np.ndarray  # length T+1, alpha_bar[0] == 1, strictly decreasing
    eta: float = 1.0       # DDIM stochasticity in [0, 1]

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=float)
        object.__setattr__(self, "alpha_bar", ab)
        if ab.ndim != 1 or ab.size < 2:
            raise ValueError("alpha_bar must be a 1-D array of length T+1 >= 2")
        if abs(ab[0] - 1.0) > 1e-15:
            raise ValueError("alpha_bar[0] must equal 1")
        if np.any(np.diff(ab) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if not (0.0 < ab[-1] < 1.0):
            raise ValueError("alpha_bar[T] must lie in (0, 1)")
        if not (0.0 <= self.eta <= 1.0):
            raise ValueError("eta must lie in [0, 1]")

    @property
    def T(self) -> int:
        return self.alpha_bar.size - 1


@dataclass(frozen=True)
class DdimCoeffs:
    zeta: float
    kappa: float
    beta: float


def make_linear_schedule(T: int, beta_min: float = 1e-4, beta_max: float = 0.02,
                         eta: float = 1.0) -> NoiseSchedule:
    """Standard linear-beta schedule: alpha_bar[t] = prod_{u<=t} (1 - beta_u)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")
    betas = np.linspace(beta_min, beta_max, T)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(alpha_bar=alpha_bar, eta=eta)


def forward_noise(x0: Array, t: int, sched: NoiseSchedule,
                  rng: np.random.Generator | None = None,
                  eps: Array | None = None) -> Array:
    """Sample x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.

    eps may be injected for deterministic tests; otherwise it is drawn
    from rng.
    """
    if not (0 <= t <= sched.T):
        raise ValueError(f"timestep {t} outside [0, {sched.T}]")
    x0 = np.asarray(x0, dtype=float)
    if t == 0:
        return x0.copy()
    if eps is None:
        if rng is None:
            raise ValueError("either rng or eps is required for t > 0")
        eps = gaussian_sample(rng, x0.shape)
    ab = sched.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def ddim_coefficients(sched: NoiseSchedule, t: int, s: int) -> DdimCoeffs:
    """Coefficients (zeta, kappa, beta) of the DDIM transition t -> t-s."""
    if not (0 < s <= t <= sched.T):
        raise ValueError(f"need 0 < s <= t <= T, got t={t}, s={s}")
    ab_t = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t - s]
    one_m_t = 1.0 - ab_t
    one_m_prev = 1.0 - ab_prev
    beta = sched.eta * np.sqrt(one_m_prev / one_m_t) * np.sqrt(1.0 - ab_t / ab_prev)
    var = one_m_prev - beta * beta
    if var < -1e-12:
        raise ValueError(f"schedule error at (t={t}, s={s}): 1-ab_prev-beta^2 = {var}")
    zeta = np.sqrt(max(var, 0.0)) / np.sqrt(one_m_t)
    kappa = np.sqrt(ab_prev) - zeta * np.sqrt(ab_t)
    return DdimCoeffs(zeta=float(zeta), kappa=float(kappa), beta=float(beta))


def ddim_step(x_t: Array, x0_hat: Array, coeffs: DdimCoeffs,
              rng: np.random.Generator | None = None,
              z: Array | None = None) -> Array:
    """One DDIM transition; z may be injected for deterministic tests."""
    x_t = np.asarray(x_t, dtype=float)
    x0_hat = np.asarray(x0_hat, dtype=float)
    if x_t.shape != x0_hat.shape:
        raise ValueError(f"shape mismatch: {x_t.shape} vs {x0_hat.shape}")
    out = coeffs.zeta * x_t + coeffs.kappa * x0_hat
    if coeffs.beta != 0.0:
        if z is None:
            if rng is None:
                raise ValueError("stochastic step needs rng or injected z")
            z = gaussian_sample(rng, x_t.shape)
        out = out + coeffs.beta * z
    return out


def timestep_grid(T: int, steps: int) -> list[tuple[int, int]]:
    """Uniform stride grid as (t, t_next) pairs ending at t_next = 0."""
    if not (1 <= steps <= T):
        raise ValueError(f"steps must lie in [1, T], got {steps}")
    ts = sorted({max(1, round(T * k / steps)) for k in range(1, steps + 1)}, reverse=True)
    nexts = ts[1:] + [0]
    return list(zip(ts, nexts))
