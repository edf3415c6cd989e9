"""Probes and metrics: Jacobian symmetry, direction comparison, PSNR/MSE.

These are the measurement tools behind the probe-jacobian and
compare-directions experiments; they operate on any denoiser callable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoisers import exact_jacobian
from .guidance import (BACKPROP_EXACT, NEWTON_EXACT, compute_direction,
                       direction_divergence, error_vector)
from .linalg import Array
from .operators import Measurement

PSNR_CAP_DB = 99.0


def mse(a: Array, b: Array) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a: Array, b: Array, peak: float = 2.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 dB for identical inputs.

    peak defaults to 2.0 because signals live in [-1, 1].
    """
    if peak <= 0:
        raise ValueError("peak must be positive")
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(peak * peak / err), PSNR_CAP_DB))


def constraint_residual(meas: Measurement, x0: Array) -> float:
    """||A x0 - y||_2."""
    r = meas.op.apply(np.asarray(x0, dtype=float)) - meas.y
    return float(np.linalg.norm(r))


def fd_jacobian_entry(den, x_t: Array, t: int, a: int, b: int,
                      delta: float = 1e-5) -> float:
    """J[a, b] = d x0_hat_a / d x_t_b by central finite difference."""
    x_t = np.asarray(x_t, dtype=float)
    step = delta * max(1.0, float(np.max(np.abs(x_t))))
    xp = x_t.copy()
    xm = x_t.copy()
    xp[b] += step
    xm[b] -= step
    return float((den(xp, t)[a] - den(xm, t)[a]) / (2.0 * step))


@dataclass
class SymmetryProbeResult:
    t: int
    pairs: np.ndarray         # (n_pairs, 2) coordinate indices, a != b
    scatter: np.ndarray       # (n_pairs, 2) columns (J[a,b], J[b,a])
    asymmetry_score: float    # ||J - J^T||_F / ||J||_F of the exact Jacobian

    def max_pair_gap(self) -> float:
        return float(np.max(np.abs(self.scatter[:, 0] - self.scatter[:, 1])))


def jacobian_symmetry_probe(den, x_t: Array, t: int, n_pairs: int,
                            rng: np.random.Generator) -> SymmetryProbeResult:
    """Sample coordinate pairs (a, b), a != b, and estimate (J[a,b], J[b,a]).

    Pair entries come from directional finite differences; the summary
    asymmetry score comes from the exact Jacobian so it is not limited by
    FD error.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    x_t = np.asarray(x_t, dtype=float)
    dim = x_t.size
    if dim < 2:
        raise ValueError("need dimension >= 2 to sample off-diagonal pairs")
    pairs = np.empty((n_pairs, 2), dtype=int)
    for i in range(n_pairs):
        a, b = rng.choice(dim, size=2, replace=False)
        pairs[i] = (a, b)
    scatter = np.array([[fd_jacobian_entry(den, x_t, t, a, b),
                         fd_jacobian_entry(den, x_t, t, b, a)] for a, b in pairs])
    jac = exact_jacobian(den, x_t, t)
    denom = float(np.linalg.norm(jac))
    if denom == 0.0:
        raise ValueError("Jacobian is identically zero; asymmetry undefined")
    score = float(np.linalg.norm(jac - jac.T)) / denom
    return SymmetryProbeResult(t=t, pairs=pairs, scatter=scatter, asymmetry_score=score)


def asymmetry_score(den, x_t: Array, t: int) -> float:
    """Relative asymmetry ||J - J^T||_F / ||J||_F of the denoiser Jacobian."""
    jac = exact_jacobian(den, np.asarray(x_t, dtype=float), t)
    denom = float(np.linalg.norm(jac))
    if denom == 0.0:
        raise ValueError("Jacobian is identically zero; asymmetry undefined")
    return float(np.linalg.norm(jac - jac.T)) / denom


@dataclass
class DirectionCompareResult:
    """Two update branches from one shared x_t at a fixed timestep.

    costs have length n_updates + 1 (cost before each update, plus final);
    cosines has length n_updates (both directions evaluated at the Newton
    branch state before each update).
    """
    t: int
    x_t: np.ndarray
    newton_costs: np.ndarray
    backprop_costs: np.ndarray
    cosines: np.ndarray
    x0_newton: np.ndarray
    x0_backprop: np.ndarray


def direction_compare_experiment(den, meas: Measurement, x_t: Array, t: int,
                                 n_updates: int = 5,
                                 step_size: float = 1.0) -> DirectionCompareResult:
    """Run n_updates Newton vs backprop updates from the same starting x_t.

    Both branches start at the identical x_t; per-step constraint costs are
    recorded for each branch, plus the cosine between the two candidate
    directions at the Newton branch's state.
    """
    if n_updates < 1:
        raise ValueError("n_updates must be >= 1")
    x_n = np.asarray(x_t, dtype=float).copy()
    x_b = x_n.copy()
    newton_costs, backprop_costs, cosines = [], [], []
    for _ in range(n_updates):
        x0_n = den(x_n, t)
        e_n = error_vector(meas.op, x0_n, meas.y)
        r_n = meas.op.apply(x0_n) - meas.y
        newton_costs.append(float(r_n @ r_n))
        d_newton = compute_direction(NEWTON_EXACT, den, x_n, t, e_n, x0_base=x0_n)
        d_back_here = compute_direction(BACKPROP_EXACT, den, x_n, t, e_n, x0_base=x0_n)
        cosines.append(direction_divergence(d_newton.h, d_back_here.h))

        x0_b = den(x_b, t)
        e_b = error_vector(meas.op, x0_b, meas.y)
        r_b = meas.op.apply(x0_b) - meas.y
        backprop_costs.append(float(r_b @ r_b))
        d_back = compute_direction(BACKPROP_EXACT, den, x_b, t, e_b, x0_base=x0_b)

        x_n = x_n + step_size * d_newton.h
        x_b = x_b + step_size * d_back.h

    x0_n = den(x_n, t)
    x0_b = den(x_b, t)
    r_n = meas.op.apply(x0_n) - meas.y
    r_b = meas.op.apply(x0_b) - meas.y
    newton_costs.append(float(r_n @ r_n))
    backprop_costs.append(float(r_b @ r_b))
    return DirectionCompareResult(
        t=t, x_t=np.asarray(x_t, dtype=float).copy(),
        newton_costs=np.array(newton_costs), backprop_costs=np.array(backprop_costs),
        cosines=np.array(cosines), x0_newton=x0_n, x0_backprop=x0_b)
