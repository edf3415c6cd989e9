"""Dense linear algebra, seeded RNG construction, and the SPD matrix helper.

All signals are float64 numpy arrays. Randomness comes exclusively from
numpy's PCG64 generator; per-run substreams are derived from the tuple
(seed, *stream) through SeedSequence so parallel experiment grids stay
deterministic and platform independent.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

Array = np.ndarray

# Exact-Jacobian oracles are O(d^2) forward passes; everything here is
# desk scale by design.
MAX_DENSE_DIM = 4096


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Build a PCG64 generator from a base seed and optional substream ids.

    make_rng(seed, k) for k = 0, 1, 2, ... gives statistically independent
    streams for parallel runs of the same experiment.
    """
    entropy = [int(seed)] + [int(s) for s in stream]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def gaussian_sample(rng: np.random.Generator, shape) -> Array:
    """I.i.d. standard normal tensor of the given shape; advances rng."""
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if len(shape) == 0:
        raise ValueError("shape must be nonempty")
    if any(s <= 0 for s in shape):
        raise ValueError(f"dimensions must be positive, got {shape}")
    return rng.standard_normal(shape)


def ensure_finite(x: Array, context: str = "tensor") -> Array:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite values in {context}")
    return x


class SpdMatrix:
    """Symmetric positive-definite matrix with a cached Cholesky factor.

    Only the lower triangle of the input is read, so stored entries are
    symmetric to the bit.
    """

    def __init__(self, mat):
        mat = np.asarray(mat, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {mat.shape}")
        lower = np.tril(mat)
        self.mat = lower + np.tril(mat, -1).T
        try:
            self._chol = cho_factor(self.mat, lower=True)
        except LinAlgError as exc:
            raise ValueError("matrix is not symmetric positive definite") from exc

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def solve(self, b: Array) -> Array:
        """Solve A x = b via the cached Cholesky factor."""
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {b.shape}")
        return cho_solve(self._chol, b)

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self._chol[0]))))

    def matvec(self, v: Array) -> Array:
        return matvec(self.mat, v)


def cholesky_solve(a, b: Array) -> Array:
    """Solve A x = b for SPD A (SpdMatrix or raw array)."""
    if not isinstance(a, SpdMatrix):
        a = SpdMatrix(a)
    return a.solve(b)


def matvec(m: Array, v: Array) -> Array:
    m = np.asarray(m, dtype=float)
    v = np.asarray(v, dtype=float)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ValueError(f"shape mismatch in matvec: {m.shape} @ {v.shape}")
    return m @ v


def dot(a: Array, b: Array) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch in dot: {a.shape} vs {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))


def norm(a: Array) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float).ravel()))


def axpy(alpha: float, x: Array, y: Array) -> Array:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch in axpy: {x.shape} vs {y.shape}")
    return alpha * x + y
