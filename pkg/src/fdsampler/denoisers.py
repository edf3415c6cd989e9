"""Denoiser implementations and exact Jacobian/JVP/VJP oracles.

A denoiser is any callable mapping a noisy signal and a timestep to the
posterior-mean estimate of the clean signal: den(x_t, t) -> x0_hat, same
shape, deterministic. Three implementations live here:

  * GmmDenoiser  -- analytic posterior mean under a Gaussian-mixture prior
                    (exact, symmetric Jacobian);
  * LinearDenoiser -- x0_hat = M x + b with a configurable, possibly
                    asymmetric matrix;
  * MlpDenoiser  -- a small tanh network trained by denoising regression
                    (realistically asymmetric Jacobian).

The Jacobian/JVP/VJP oracles are central-difference based (analytic for
the linear case) and are referee-grade: O(d) forward passes per Jacobian,
intended for desk-scale dimensions only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .linalg import MAX_DENSE_DIM, Array, SpdMatrix, ensure_finite
from .schedule import NoiseSchedule

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GmmPrior:
    """Gaussian mixture prior: weights w_i, means mu_i, covariances Sigma_i."""
    weights: np.ndarray          # (k,), positive, sums to 1
    means: np.ndarray            # (k, d)
    covs: tuple[SpdMatrix, ...]  # k SPD matrices of dim d

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", tuple(self.covs))
        if w.ndim != 1 or w.size < 1 or np.any(w <= 0):
            raise ValueError("weights must be positive and nonempty")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        if mu.shape[0] != w.size or len(self.covs) != w.size:
            raise ValueError("component count mismatch among weights/means/covs")
        if any(c.dim != mu.shape[1] for c in self.covs):
            raise ValueError("covariance dimension mismatch")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size


def isotropic_gmm(weights, means, scales) -> GmmPrior:
    """Convenience constructor with Sigma_i = scales[i]^2 * I."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    d = means.shape[1]
    covs = tuple(SpdMatrix(s * s * np.eye(d)) for s in np.atleast_1d(scales))
    return GmmPrior(weights=np.atleast_1d(weights), means=means, covs=covs)


class GmmDenoiser:
    """Exact posterior mean E[x0 | x_t] under a Gaussian-mixture prior.

    The noised mixture at time t has components N(sqrt(ab) mu_i, C_i) with
    C_i = ab Sigma_i + (1 - ab) I. Responsibilities are computed in
    log-space with log-sum-exp; per-timestep Cholesky factors are cached.
    """

    def __init__(self, prior: GmmPrior, sched: NoiseSchedule):
        self.prior = prior
        self.sched = sched
        self._cache: dict[int, list] = {}

    @property
    def dim(self) -> int:
        return self.prior.dim

    def _components(self, t: int):
        if t not in self._cache:
            if not (0 <= t <= self.sched.T):
                raise ValueError(f"timestep {t} outside [0, {self.sched.T}]")
            ab = self.sched.alpha_bar[t]
            comps = []
            eye = np.eye(self.dim)
            for w, mu, sig in zip(self.prior.weights, self.prior.means, self.prior.covs):
                c = SpdMatrix(ab * sig.mat + (1.0 - ab) * eye)
                comps.append((float(np.log(w)), np.sqrt(ab) * mu, c, c.log_det(), sig))
            self._cache[t] = comps
        return self._cache[t]

    def _responsibilities(self, x_t: Array, t: int):
        comps = self._components(t)
        logps = np.empty(len(comps))
        sols = []
        for i, (logw, m, c, logdet, _) in enumerate(comps):
            diff = x_t - m
            sol = c.solve(diff)
            sols.append(sol)
            logps[i] = logw - 0.5 * (diff @ sol) - 0.5 * logdet - 0.5 * self.dim * _LOG_2PI
        shifted = logps - logps.max()
        r = np.exp(shifted)
        r /= r.sum()
        return r, sols, comps

    def __call__(self, x_t: Array, t: int) -> Array:
        x_t = np.asarray(x_t, dtype=float)
        r, sols, comps = self._responsibilities(x_t, t)
        ab = self.sched.alpha_bar[t]
        sqrt_ab = np.sqrt(ab)
        out = np.zeros_like(x_t)
        for ri, sol, (_, _, _, _, sig) in zip(r, sols, comps):
            out += ri * (sig.mat @ sol)
        mean_mu = r @ self.prior.means
        return mean_mu + sqrt_ab * out

    def score(self, x_t: Array, t: int) -> Array:
        """Gradient of log p_t(x_t) for the noised mixture."""
        x_t = np.asarray(x_t, dtype=float)
        r, sols, _ = self._responsibilities(x_t, t)
        out = np.zeros_like(x_t)
        for ri, sol in zip(r, sols):
            out -= ri * sol
        return out

    def log_density(self, x_t: Array, t: int) -> float:
        comps = self._components(t)
        logps = np.empty(len(comps))
        for i, (logw, m, c, logdet, _) in enumerate(comps):
            diff = np.asarray(x_t, dtype=float) - m
            logps[i] = logw - 0.5 * (diff @ c.solve(diff)) - 0.5 * logdet \
                - 0.5 * self.dim * _LOG_2PI
        top = logps.max()
        return float(top + np.log(np.exp(logps - top).sum()))


def gmm_posterior_mean(prior: GmmPrior, sched: NoiseSchedule, x_t: Array, t: int) -> Array:
    return GmmDenoiser(prior, sched)(x_t, t)


def gmm_score(prior: GmmPrior, sched: NoiseSchedule, x_t: Array, t: int) -> Array:
    return GmmDenoiser(prior, sched).score(x_t, t)


class LinearDenoiser:
    """x0_hat = M x_t + b for every t; J = M exactly."""

    def __init__(self, matrix, bias=None):
        self.matrix = np.asarray(matrix, dtype=float)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError("matrix must be square")
        self.bias = (np.zeros(self.matrix.shape[0]) if bias is None
                     else np.asarray(bias, dtype=float))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, x_t: Array, t: int) -> Array:
        return self.matrix @ np.asarray(x_t, dtype=float) + self.bias


class MlpDenoiser:
    """Small fully-connected tanh network estimating x0 from (x_t, t).

    The network predicts the velocity target
    v = sqrt(ab) eps - sqrt(1 - ab) x0 and the estimate is recovered as
    x0_hat = sqrt(ab) x_t - sqrt(1 - ab) v_hat, which keeps the map well
    conditioned at both ends of the schedule. Timestep conditioning: the
    scalars (sqrt(ab_t), sqrt(1 - ab_t)) are concatenated to the input,
    the smallest scheme that makes the t-dependence smooth. Activations
    are tanh throughout so finite differences of the network are well
    behaved.
    """

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray],
                 alpha_bar: np.ndarray):
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.alpha_bar = np.asarray(alpha_bar, dtype=float)
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights/biases layer count mismatch")
        self._dim = self.weights[-1].shape[0]

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def _embed(self, x: Array, t: int) -> Array:
        ab = self.alpha_bar[t]
        return np.concatenate([x, [np.sqrt(ab), np.sqrt(1.0 - ab)]])

    def _net(self, h: Array) -> Array:
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(w @ h + b)
        return self.weights[-1] @ h + self.biases[-1]

    def __call__(self, x_t: Array, t: int) -> Array:
        x_t = np.asarray(x_t, dtype=float)
        v_hat = self._net(self._embed(x_t, t))
        ab = self.alpha_bar[t]
        return np.sqrt(ab) * x_t - np.sqrt(1.0 - ab) * v_hat

    def forward_batch(self, x: Array, ts: np.ndarray) -> Array:
        """Batched x0_hat, x of shape (n, d), ts of shape (n,)."""
        ab = self.alpha_bar[ts]
        h = np.concatenate([x, np.sqrt(ab)[:, None], np.sqrt(1.0 - ab)[:, None]], axis=1)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ w.T + b)
        v_hat = h @ self.weights[-1].T + self.biases[-1]
        return np.sqrt(ab)[:, None] * x - np.sqrt(1.0 - ab)[:, None] * v_hat


@dataclass
class MlpTrainConfig:
    hidden: tuple[int, ...] = (128, 128)
    steps: int = 4000
    batch_size: int = 64
    learning_rate: float = 1e-3
    holdout_fraction: float = 0.2
    loss_threshold: float | None = None  # post-training held-out MSE gate
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


class TrainingDivergence(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"denoiser training diverged (non-finite loss) at step {step}")
        self.step = step


def train_mlp_denoiser(dataset: Array, sched: NoiseSchedule, cfg: MlpTrainConfig,
                       rng: np.random.Generator) -> MlpDenoiser:
    """Train an MlpDenoiser by denoising regression ||x0_hat(x_t, t) - x0||^2.

    Training is fully seeded by rng; the returned model is deterministic.
    Raises TrainingDivergence on NaN loss and ValueError if the held-out
    loss exceeds cfg.loss_threshold (when set).
    """
    dataset = np.atleast_2d(np.asarray(dataset, dtype=float))
    if dataset.size == 0:
        raise ValueError("dataset must be nonempty")
    n, d = dataset.shape

    perm = rng.permutation(n)
    n_hold = max(1, int(round(cfg.holdout_fraction * n))) if n > 1 else 0
    hold, train = dataset[perm[:n_hold]], dataset[perm[n_hold:]]
    if train.shape[0] == 0:
        train = dataset

    widths = [d + 2, *cfg.hidden, d]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        scale = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))

    model = MlpDenoiser(weights, biases, sched.alpha_bar)
    params = model.weights + model.biases
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]

    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, train.shape[0], size=cfg.batch_size)
        x0 = train[idx]
        ts = rng.integers(1, sched.T + 1, size=cfg.batch_size)
        eps = rng.standard_normal(x0.shape)
        ab = sched.alpha_bar[ts][:, None]
        x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps

        grads, loss = _mlp_loss_grads(model, x_t, ts, x0)
        if not np.isfinite(loss):
            raise TrainingDivergence(step)

        lr = cfg.learning_rate
        for p, g, m, v in zip(params, grads, m_state, v_state):
            m *= cfg.adam_beta1
            m += (1.0 - cfg.adam_beta1) * g
            v *= cfg.adam_beta2
            v += (1.0 - cfg.adam_beta2) * g * g
            mhat = m / (1.0 - cfg.adam_beta1 ** step)
            vhat = v / (1.0 - cfg.adam_beta2 ** step)
            p -= lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)

    if cfg.loss_threshold is not None and hold.shape[0] > 0:
        loss = heldout_denoising_loss(model, hold, sched, make_eval_rng(rng))
        if loss > cfg.loss_threshold:
            raise ValueError(
                f"held-out denoising loss {loss:.4f} exceeds threshold {cfg.loss_threshold}")
    return model


def make_eval_rng(rng: np.random.Generator) -> np.random.Generator:
    """Child generator so evaluation draws do not disturb the parent stream."""
    return np.random.Generator(np.random.PCG64(rng.integers(0, 2**63)))


def heldout_denoising_loss(model: MlpDenoiser, holdout: Array, sched: NoiseSchedule,
                           rng: np.random.Generator, repeats: int = 8) -> float:
    """Mean per-element denoising MSE over noised copies of the holdout set."""
    holdout = np.atleast_2d(holdout)
    x0 = np.repeat(holdout, repeats, axis=0)
    ts = rng.integers(1, sched.T + 1, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape)
    ab = sched.alpha_bar[ts][:, None]
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    pred = model.forward_batch(x_t, ts)
    return float(np.mean((pred - x0) ** 2))


def _mlp_loss_grads(model: MlpDenoiser, x_t: Array, ts: np.ndarray, x0: Array):
    """Manual backprop of the batch-mean squared error through the MLP."""
    ab = model.alpha_bar[ts]
    sq, sq1m = np.sqrt(ab)[:, None], np.sqrt(1.0 - ab)[:, None]
    acts = [np.concatenate([x_t, sq, sq1m], axis=1)]
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        acts.append(np.tanh(acts[-1] @ w.T + b))
    v_hat = acts[-1] @ model.weights[-1].T + model.biases[-1]

    # velocity-space residual: ||v_hat - v||^2 equals the denoising error
    # ||x0_hat - x0||^2 reweighted by 1/(1 - ab), which trains all
    # timesteps evenly instead of ignoring the low-noise end.
    eps = (x_t - sq * x0) / sq1m
    v_target = sq * eps - sq1m * x0
    resid = v_hat - v_target
    loss = float(np.mean(resid ** 2))
    delta = (2.0 / resid.size) * resid

    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    grads_w[-1] = delta.T @ acts[-1]
    grads_b[-1] = delta.sum(axis=0)
    back = delta @ model.weights[-1]
    for layer in range(len(model.weights) - 2, -1, -1):
        back = back * (1.0 - acts[layer + 1] ** 2)
        grads_w[layer] = back.T @ acts[layer]
        grads_b[layer] = back.sum(axis=0)
        if layer > 0:
            back = back @ model.weights[layer]
    return grads_w + grads_b, loss


# --- exact-Jacobian oracles -------------------------------------------------

def exact_jacobian(den, x_t: Array, t: int, step: float | None = None) -> Array:
    """Referee-grade Jacobian of den at (x_t, t).

    Central differences, column by column, with step
    1e-5 * max(1, ||x||_inf); analytic for LinearDenoiser. O(d) forward
    passes, capped at MAX_DENSE_DIM.
    """
    if isinstance(den, LinearDenoiser):
        return den.matrix.copy()
    x_t = np.asarray(x_t, dtype=float)
    d = x_t.size
    if d > MAX_DENSE_DIM:
        raise ValueError(f"dimension {d} exceeds dense-oracle cap {MAX_DENSE_DIM}")
    h = step if step is not None else 1e-5 * max(1.0, float(np.abs(x_t).max()))
    jac = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        jac[:, j] = (den(x_t + e, t) - den(x_t - e, t)) / (2.0 * h)
    return ensure_finite(jac, "exact_jacobian")


def jvp_exact(den, x_t: Array, t: int, v: Array) -> Array:
    """J v via the exact-Jacobian oracle."""
    v = np.asarray(v, dtype=float)
    if v.shape != np.asarray(x_t).shape:
        raise ValueError("v must match x_t's shape")
    return exact_jacobian(den, x_t, t) @ v


def vjp_exact(den, x_t: Array, t: int, v: Array) -> Array:
    """J^T v via the exact-Jacobian oracle."""
    v = np.asarray(v, dtype=float)
    if v.shape != np.asarray(x_t).shape:
        raise ValueError("v must match x_t's shape")
    return exact_jacobian(den, x_t, t).T @ v


class CountingDenoiser:
    """Wrapper counting forward, VJP, and JVP evaluations of a denoiser.

    The oracle's internal finite-difference forwards bypass the counter:
    one vjp() call counts as one backprop-equivalent operation.
    """

    def __init__(self, inner):
        self.inner = inner
        self.forwards = 0
        self.vjps = 0
        self.jvps = 0

    @property
    def dim(self):
        return getattr(self.inner, "dim", None)

    def __call__(self, x_t: Array, t: int) -> Array:
        self.forwards += 1
        return self.inner(x_t, t)

    def vjp(self, x_t: Array, t: int, v: Array) -> Array:
        self.vjps += 1
        return vjp_exact(self.inner, x_t, t, v)

    def jvp(self, x_t: Array, t: int, v: Array) -> Array:
        self.jvps += 1
        return jvp_exact(self.inner, x_t, t, v)


# --- trained-model serialization --------------------------------------------

_MLP_MAGIC = b"FDSMLP01"


def save_mlp(model: MlpDenoiser, path):
    """Write the documented flat binary format.

    Layout (little-endian): magic "FDSMLP01", uint32 version, uint32 layer
    count L (number of weight matrices), uint32 widths[L+1], uint64
    alpha_bar length, then alpha_bar float64s, then per layer the weight
    matrix (row-major) and bias vector as raw float64.
    """
    widths = model.widths
    with open(path, "wb") as f:
        f.write(_MLP_MAGIC)
        f.write(struct.pack("<II", 1, len(model.weights)))
        f.write(struct.pack(f"<{len(widths)}I", *widths))
        f.write(struct.pack("<Q", model.alpha_bar.size))
        f.write(model.alpha_bar.astype("<f8").tobytes())
        for w, b in zip(model.weights, model.biases):
            f.write(w.astype("<f8").tobytes())
            f.write(b.astype("<f8").tobytes())


def load_mlp(path) -> MlpDenoiser:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != _MLP_MAGIC:
        raise ValueError(f"bad magic in {path}: not a saved denoiser")
    off = 8
    version, n_layers = struct.unpack_from("<II", data, off)
    off += 8
    if version != 1:
        raise ValueError(f"unsupported denoiser format version {version}")
    widths = struct.unpack_from(f"<{n_layers + 1}I", data, off)
    off += 4 * (n_layers + 1)
    (ab_len,) = struct.unpack_from("<Q", data, off)
    off += 8
    alpha_bar = np.frombuffer(data, dtype="<f8", count=ab_len, offset=off).copy()
    off += 8 * ab_len
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=off)
        off += 8 * fan_in * fan_out
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(w.reshape(fan_out, fan_in).copy())
        biases.append(b.copy())
    if off != len(data):
        raise ValueError(f"trailing bytes in {path}: expected {off}, got {len(data)}")
    return MlpDenoiser(weights, biases, alpha_bar)
