"""Update directions on x_t for constraint-guided sampling.

Two competing directions are provided for the error vector
e = A^T (A x0_hat - y):

  * the Newton direction -J e, approximated with two forward passes
    through the denoiser (the production path), or computed via the exact
    JVP oracle (referee path);
  * the classical backprop direction -J^T e (gradient descent on the
    constraint cost), computed via the exact VJP oracle as a baseline.

Sign convention: the forward difference perturbs x_t by -delta * e, i.e.
h = [x0_hat(x_t - delta e) - x0_hat(x_t)] / delta, which approximates
-J e; the sampler then applies x_t += lambda * h. On a linear model this
is the sign that reduces the constraint residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoisers import jvp_exact, vjp_exact
from .linalg import Array, norm
from .operators import Measurement, MeasurementOp

NEWTON_FD = "newton_fd"
NEWTON_EXACT = "newton_exact"
BACKPROP_EXACT = "backprop_exact"
DIRECTION_KINDS = (NEWTON_FD, NEWTON_EXACT, BACKPROP_EXACT)

DELTA_MIN = 1e-6
DELTA_MAX = 1e-1


@dataclass(frozen=True)
class GuidanceConfig:
    kind: str = NEWTON_FD
    delta: float | None = None      # None selects the scale-aware default
    epsilon_scale: float = 1.0      # explicit here, usually folded into lambda

    def __post_init__(self):
        if self.kind not in DIRECTION_KINDS:
            raise ValueError(f"unknown direction kind {self.kind!r}; valid: {DIRECTION_KINDS}")
        if self.delta is not None and self.delta <= 0:
            raise ValueError("delta must be positive")


@dataclass
class DirectionResult:
    h: np.ndarray
    e: np.ndarray
    forward_calls: int
    vjp_calls: int


def error_vector(op: MeasurementOp, x0_hat: Array, y: Array) -> Array:
    """e = A^T (A x0_hat - y), i.e. half the cost gradient w.r.t. x0_hat."""
    return op.adjoint(op.apply(x0_hat) - np.asarray(y, dtype=float).ravel())


def default_fd_step(x_t: Array, e: Array) -> float:
    """Scale-free finite-difference step, clamped to [1e-6, 1e-1].

    Balances truncation against float64 round-off and is invariant to
    rescaling of e.
    """
    x_inf = float(np.abs(x_t).max()) if np.asarray(x_t).size else 0.0
    e_inf = float(np.abs(e).max()) if np.asarray(e).size else 0.0
    return float(np.clip(1e-4 * (1.0 + x_inf) / (1.0 + e_inf), DELTA_MIN, DELTA_MAX))


def newton_direction_fd(den, x_t: Array, t: int, e: Array,
                        delta: float | None = None,
                        x0_base: Array | None = None,
                        epsilon_scale: float = 1.0) -> DirectionResult:
    """h ~= -J e from two denoiser forward passes, zero backprop.

    When the caller already holds x0_hat(x_t, t) it can be passed as
    x0_base; the reported forward_calls still counts it, so one inner
    iteration of the sampler always accounts for exactly 2 forwards.
    """
    x_t = np.asarray(x_t, dtype=float)
    e = np.asarray(e, dtype=float)
    if e.shape != x_t.shape:
        raise ValueError(f"error vector shape {e.shape} does not match x_t {x_t.shape}")
    if not np.any(e):
        return DirectionResult(h=np.zeros_like(x_t), e=e, forward_calls=1, vjp_calls=0)
    if x0_base is None:
        x0_base = den(x_t, t)
    d = float(delta) if delta is not None else default_fd_step(x_t, e)
    if d <= 0:
        raise ValueError("delta must be positive")
    x0_pert = den(x_t - d * e, t)
    h = epsilon_scale * (x0_pert - x0_base) / d
    if not np.all(np.isfinite(h)):
        raise ValueError(f"non-finite direction (delta={d}, ||e||={norm(e)})")
    return DirectionResult(h=h, e=e, forward_calls=2, vjp_calls=0)


def newton_direction_exact(den, x_t: Array, t: int, e: Array,
                           epsilon_scale: float = 1.0) -> DirectionResult:
    """h = -J e via the exact-Jacobian JVP; oracle grade."""
    e = np.asarray(e, dtype=float)
    jvp = den.jvp if hasattr(den, "jvp") else (lambda x, tt, v: jvp_exact(den, x, tt, v))
    h = -epsilon_scale * jvp(x_t, t, e)
    return DirectionResult(h=h, e=e, forward_calls=1, vjp_calls=0)


def backprop_direction(den, x_t: Array, t: int, e: Array,
                       epsilon_scale: float = 1.0) -> DirectionResult:
    """h = -J^T e, the gradient-descent move on the constraint cost."""
    e = np.asarray(e, dtype=float)
    vjp = den.vjp if hasattr(den, "vjp") else (lambda x, tt, v: vjp_exact(den, x, tt, v))
    h = -epsilon_scale * vjp(x_t, t, e)
    return DirectionResult(h=h, e=e, forward_calls=1, vjp_calls=1)


def compute_direction(kind: str, den, x_t: Array, t: int, e: Array,
                      delta: float | None = None,
                      x0_base: Array | None = None,
                      epsilon_scale: float = 1.0) -> DirectionResult:
    if kind == NEWTON_FD:
        return newton_direction_fd(den, x_t, t, e, delta=delta, x0_base=x0_base,
                                   epsilon_scale=epsilon_scale)
    if kind == NEWTON_EXACT:
        return newton_direction_exact(den, x_t, t, e, epsilon_scale=epsilon_scale)
    if kind == BACKPROP_EXACT:
        return backprop_direction(den, x_t, t, e, epsilon_scale=epsilon_scale)
    raise ValueError(f"unknown direction kind {kind!r}")


def direction_divergence(h_a: Array, h_b: Array) -> float:
    """Cosine similarity between two update directions, in [-1, 1]."""
    na, nb = norm(h_a), norm(h_b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for a zero direction")
    cos = float(np.dot(np.ravel(h_a), np.ravel(h_b)) / (na * nb))
    return float(np.clip(cos, -1.0, 1.0))


def constraint_cost(meas: Measurement, x0_hat: Array) -> float:
    """C = ||A x0_hat - y||^2, the squared constraint residual."""
    r = meas.op.apply(x0_hat) - meas.y
    return float(np.dot(r, r))
