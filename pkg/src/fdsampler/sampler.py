"""Constrained DDIM sampling with inner guidance iterations.

The main loop draws x_T ~ N(0, I) and walks the timestep grid; at each
timestep it performs K inner iterations of

    e = A^T (A x0_hat(x_t) - y)
    h = direction(x_t, e)            # Newton-FD by default
    x_t += lambda * h

followed by one DDIM step. Warm restarts re-noise the inferred x0 to an
intermediate timestep and resume from there. Every run is reproducible
bit-exactly from (config, seed).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .denoisers import CountingDenoiser
from .guidance import (BACKPROP_EXACT, GuidanceConfig, compute_direction,
                       constraint_cost, error_vector)
from .linalg import Array, gaussian_sample, norm
from .operators import Measurement
from .schedule import NoiseSchedule, ddim_coefficients, ddim_step, forward_noise, timestep_grid

log = logging.getLogger(__name__)

DDIM_ROW = -1  # inner_iter marker for the per-timestep DDIM transition


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    inner_iters: int = 3           # K of the inner guidance loop
    step_size: float = 1.0         # lambda
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    restarts: int = 0              # R warm restarts
    restart_t: int | None = None   # default 0.6 * T, resolved at run time
    perturb_rho: float = 0.0       # error-perturbation scale (SR anti-blur)
    snapshot_ts: tuple[int, ...] = ()

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.inner_iters < 0:
            raise ValueError("inner_iters must be >= 0")
        if self.inner_iters > 0 and self.step_size <= 0:
            raise ValueError("step_size must be positive when inner_iters > 0")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")
        if self.perturb_rho < 0:
            raise ValueError("perturb_rho must be >= 0")


@dataclass(frozen=True)
class TraceRow:
    t: int
    inner_iter: int  # 0..K-1 for guidance iterations, DDIM_ROW for the step
    cost: float
    err_norm: float
    forwards: int
    vjps: int


class RunTrace:
    """Per-step evidence: costs, error norms, call counts, x0 snapshots."""

    def __init__(self):
        self.rows: list[TraceRow] = []
        self.snapshots: dict[int, np.ndarray] = {}

    @property
    def total_forwards(self) -> int:
        return sum(r.forwards for r in self.rows)

    @property
    def total_vjps(self) -> int:
        return sum(r.vjps for r in self.rows)

    def inner_rows(self) -> list[TraceRow]:
        return [r for r in self.rows if r.inner_iter != DDIM_ROW]

    def final_cost(self) -> float:
        if not self.rows:
            raise ValueError("empty trace")
        return self.rows[-1].cost

    def check_counts(self, counted: CountingDenoiser):
        """Invariant: cumulative counts equal the denoiser counter totals."""
        if self.total_forwards != counted.forwards or self.total_vjps != counted.vjps:
            raise AssertionError(
                f"trace accounting mismatch: rows say ({self.total_forwards} fwd, "
                f"{self.total_vjps} vjp), counter says ({counted.forwards}, {counted.vjps})")

    def write_csv(self, f):
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["t", "inner_iter", "cost", "err_norm", "forwards", "vjps"])
        for r in self.rows:
            writer.writerow([r.t, r.inner_iter, f"{r.cost:.17g}", f"{r.err_norm:.17g}",
                             r.forwards, r.vjps])


class SamplingError(RuntimeError):
    def __init__(self, t: int, trace: RunTrace):
        super().__init__(f"non-finite state at timestep {t}")
        self.t = t
        self.trace = trace


def perturb_error(e: Array, rho: float, rng: np.random.Generator) -> Array:
    """e + rho * z with z standard normal; rho = 0 is the identity."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if rho == 0.0:
        return np.asarray(e, dtype=float)
    return np.asarray(e, dtype=float) + rho * gaussian_sample(rng, np.shape(e))


def _run_chain(counted: CountingDenoiser, sched: NoiseSchedule, meas: Measurement,
               cfg: SamplerConfig, rng: np.random.Generator, x: Array,
               grid: list[tuple[int, int]], trace: RunTrace) -> Array:
    lam = cfg.step_size
    gcfg = cfg.guidance
    for t, t_next in grid:
        for i in range(cfg.inner_iters):
            x0_hat = counted(x, t)
            cost = constraint_cost(meas, x0_hat)
            e = error_vector(meas.op, x0_hat, meas.y)
            if cfg.perturb_rho > 0:
                e = perturb_error(e, cfg.perturb_rho, rng)
            res = compute_direction(gcfg.kind, counted, x, t, e, delta=gcfg.delta,
                                    x0_base=x0_hat, epsilon_scale=gcfg.epsilon_scale)
            x = x + lam * res.h
            trace.rows.append(TraceRow(t=t, inner_iter=i, cost=cost,
                                       err_norm=norm(res.e),
                                       forwards=res.forward_calls, vjps=res.vjp_calls))
            if not np.all(np.isfinite(x)):
                raise SamplingError(t, trace)
        x0_hat = counted(x, t)
        if t in cfg.snapshot_ts:
            trace.snapshots[t] = x0_hat.copy()
        coeffs = ddim_coefficients(sched, t, t - t_next)
        x = ddim_step(x, x0_hat, coeffs, rng)
        trace.rows.append(TraceRow(t=t, inner_iter=DDIM_ROW,
                                   cost=constraint_cost(meas, x0_hat),
                                   err_norm=norm(error_vector(meas.op, x0_hat, meas.y)),
                                   forwards=1, vjps=0))
        if not np.all(np.isfinite(x)):
            raise SamplingError(t, trace)
    return x


def constrained_sample(den, sched: NoiseSchedule, meas: Measurement,
                       cfg: SamplerConfig, rng: np.random.Generator):
    """Run the full constrained sampler; returns (x0, trace)."""
    counted = CountingDenoiser(den)
    trace = RunTrace()
    x = gaussian_sample(rng, meas.op.in_dim)
    grid = timestep_grid(sched.T, cfg.steps)
    x = _run_chain(counted, sched, meas, cfg, rng, x, grid, trace)
    trace.check_counts(counted)
    return x, trace


def warm_restart_sample(den, sched: NoiseSchedule, meas: Measurement,
                        cfg: SamplerConfig, rng: np.random.Generator):
    """Constrained sampling followed by R re-noise-and-resume rounds.

    Each restart noises the current x0 to restart_t and reruns the tail of
    the timestep grid. A restart that raises the final cost by more than
    10% over the previous round is logged as a warning, not an error.
    """
    counted = CountingDenoiser(den)
    trace = RunTrace()
    grid = timestep_grid(sched.T, cfg.steps)
    x = gaussian_sample(rng, meas.op.in_dim)
    x0 = _run_chain(counted, sched, meas, cfg, rng, x, grid, trace)
    prev_cost = trace.final_cost()

    restart_t = cfg.restart_t if cfg.restart_t is not None else int(round(0.6 * sched.T))
    if cfg.restarts > 0 and not (0 < restart_t <= sched.T):
        raise ValueError(f"restart_t {restart_t} outside (0, {sched.T}]")
    tail = [(t, nxt) for t, nxt in grid if t <= restart_t]
    if cfg.restarts > 0 and not tail:
        raise ValueError(f"no grid timesteps at or below restart_t {restart_t}")

    for r in range(cfg.restarts):
        x = forward_noise(x0, tail[0][0], sched, rng)
        x0 = _run_chain(counted, sched, meas, cfg, rng, x, tail, trace)
        cost = trace.final_cost()
        if cost > 1.1 * prev_cost:
            log.warning("warm restart %d raised final cost %.3g -> %.3g", r + 1,
                        prev_cost, cost)
        prev_cost = cost
    trace.check_counts(counted)
    return x0, trace


def dps_baseline_sample(den, sched: NoiseSchedule, meas: Measurement,
                        cfg: SamplerConfig, rng: np.random.Generator):
    """Same loop skeleton with the backprop (gradient-descent) direction."""
    baseline_cfg = replace(cfg, guidance=replace(cfg.guidance, kind=BACKPROP_EXACT))
    return constrained_sample(den, sched, meas, baseline_cfg, rng)
