"""Linear measurement operators with adjoints, plus mask utilities.

Every operator A maps a flat signal of length in_dim to a measurement of
length out_dim and satisfies the adjoint identity
dot(A x, u) == dot(x, A^T u). Masks are index sets into the flattened
signal; the free-form generator produces brush-stroke style masks whose
coverage lands in a requested range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import Array, gaussian_sample


class MeasurementOp:
    """Base contract: apply (A x) and adjoint (A^T u) with shape checks."""

    in_dim: int
    out_dim: int

    def apply(self, x: Array) -> Array:
        raise NotImplementedError

    def adjoint(self, u: Array) -> Array:
        raise NotImplementedError

    def _check_in(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.in_dim:
            raise ValueError(f"{type(self).__name__}: input length {x.size}, expected {self.in_dim}")
        return x

    def _check_out(self, u: Array) -> Array:
        u = np.asarray(u, dtype=float).ravel()
        if u.size != self.out_dim:
            raise ValueError(f"{type(self).__name__}: measurement length {u.size}, expected {self.out_dim}")
        return u

    def as_matrix(self) -> Array:
        """Dense materialization, used by oracle tests only."""
        cols = [self.apply(col) for col in np.eye(self.in_dim)]
        return np.stack(cols, axis=1)


class Identity(MeasurementOp):
    def __init__(self, dim: int):
        self.in_dim = self.out_dim = int(dim)

    def apply(self, x: Array) -> Array:
        return self._check_in(x).copy()

    def adjoint(self, u: Array) -> Array:
        return self._check_out(u).copy()


class Mask(MeasurementOp):
    """Extracts the given indices; adjoint scatters with zeros elsewhere."""

    def __init__(self, indices, dim: int):
        idx = np.asarray(indices, dtype=int).ravel()
        if idx.size != np.unique(idx).size:
            raise ValueError("mask indices must be unique")
        if idx.size == 0:
            raise ValueError("mask must select at least one entry")
        if idx.min() < 0 or idx.max() >= dim:
            raise ValueError(f"mask indices out of range for dim {dim}")
        self.indices = np.sort(idx)
        self.in_dim = int(dim)
        self.out_dim = idx.size

    def apply(self, x: Array) -> Array:
        return self._check_in(x)[self.indices]

    def adjoint(self, u: Array) -> Array:
        u = self._check_out(u)
        out = np.zeros(self.in_dim)
        out[self.indices] = u
        return out


class Downsample(MeasurementOp):
    """Non-overlapping block average by an integer factor on an (h, w) image.

    Each output pixel is the mean of an f x f input block; the adjoint
    broadcasts each measurement back over its block divided by f^2.
    """

    def __init__(self, factor: int, height: int, width: int):
        if factor < 1 or height % factor or width % factor:
            raise ValueError(f"factor {factor} must divide ({height}, {width})")
        self.factor = int(factor)
        self.height = int(height)
        self.width = int(width)
        self.in_dim = height * width
        self.out_dim = (height // factor) * (width // factor)

    def apply(self, x: Array) -> Array:
        f = self.factor
        img = self._check_in(x).reshape(self.height, self.width)
        blocks = img.reshape(self.height // f, f, self.width // f, f)
        return blocks.mean(axis=(1, 3)).ravel()

    def adjoint(self, u: Array) -> Array:
        f = self.factor
        small = self._check_out(u).reshape(self.height // f, self.width // f)
        return (np.kron(small, np.ones((f, f))) / (f * f)).ravel()


class Compose(MeasurementOp):
    """Applies ops left-to-right; adjoint runs right-to-left."""

    def __init__(self, ops):
        ops = list(ops)
        if not ops:
            raise ValueError("composition needs at least one operator")
        for a, b in zip(ops[:-1], ops[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"composition shape mismatch: {a.out_dim} vs {b.in_dim}")
        self.ops = ops
        self.in_dim = ops[0].in_dim
        self.out_dim = ops[-1].out_dim

    def apply(self, x: Array) -> Array:
        out = self._check_in(x)
        for op in self.ops:
            out = op.apply(out)
        return out

    def adjoint(self, u: Array) -> Array:
        out = self._check_out(u)
        for op in reversed(self.ops):
            out = op.adjoint(out)
        return out


@dataclass(frozen=True)
class Measurement:
    """Observation y = A x0 + sigma_y * noise together with its operator."""
    y: np.ndarray
    op: MeasurementOp
    noise_std: float = 0.0

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        object.__setattr__(self, "y", y)
        if y.size != self.op.out_dim:
            raise ValueError(f"y length {y.size} does not match operator output {self.op.out_dim}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def synthesize_measurement(op: MeasurementOp, x0_true: Array, noise_std: float,
                           rng: np.random.Generator | None = None) -> Measurement:
    """y = A x0_true + noise_std * eps."""
    clean = op.apply(x0_true)
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    if noise_std > 0:
        if rng is None:
            raise ValueError("rng required when noise_std > 0")
        clean = clean + noise_std * gaussian_sample(rng, clean.shape)
    return Measurement(y=clean, op=op, noise_std=noise_std)


def make_freeform_mask(rng: np.random.Generator, height: int, width: int,
                       coverage_range: tuple[float, float] = (0.10, 0.20),
                       max_tries: int = 500) -> np.ndarray:
    """Brush-stroke mask: sorted flat indices covering a fraction in range.

    Strokes are random walks painting a square brush of width 1-3 pixels;
    drawing stops once a target coverage sampled inside coverage_range is
    reached, and the whole mask is resampled if the final fraction falls
    outside the range.
    """
    lo, hi = coverage_range
    if not (0.0 < lo <= hi < 1.0):
        raise ValueError(f"coverage range must lie inside (0, 1), got ({lo}, {hi})")
    total = height * width
    moves = [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)]
    for _ in range(max_tries):
        canvas = np.zeros((height, width), dtype=bool)
        target = rng.uniform(lo, hi)
        guard = 0
        while canvas.sum() < target * total and guard < 50 * total:
            r = int(rng.integers(0, height))
            c = int(rng.integers(0, width))
            brush = int(rng.integers(1, 4))
            length = int(rng.integers(total // 16 + 1, total // 4 + 2))
            for _ in range(length):
                r0, r1 = max(0, r - brush // 2), min(height, r + (brush + 1) // 2)
                c0, c1 = max(0, c - brush // 2), min(width, c + (brush + 1) // 2)
                canvas[r0:r1, c0:c1] = True
                if canvas.sum() >= target * total:
                    break
                dr, dc = moves[int(rng.integers(0, len(moves)))]
                r = min(height - 1, max(0, r + dr))
                c = min(width - 1, max(0, c + dc))
            guard += length
        frac = canvas.sum() / total
        if lo <= frac <= hi:
            return np.flatnonzero(canvas.ravel())
    raise RuntimeError(f"could not hit coverage range ({lo}, {hi}) in {max_tries} tries")


def mask_fraction(indices, height: int, width: int) -> float:
    return np.asarray(indices).size / float(height * width)


def dilate_mask(indices, height: int, width: int, block: int = 8) -> np.ndarray:
    """Expand a mask to whole block-aligned tiles touching any masked pixel."""
    if height % block or width % block:
        raise ValueError(f"block {block} must divide ({height}, {width})")
    idx = np.asarray(indices, dtype=int).ravel()
    if idx.size == 0:
        return idx.copy()
    canvas = np.zeros((height, width), dtype=bool)
    canvas.ravel()[idx] = True
    tiles = canvas.reshape(height // block, block, width // block, block).any(axis=(1, 3))
    out = np.kron(tiles, np.ones((block, block), dtype=bool))
    return np.flatnonzero(out.ravel())


def complement_indices(indices, dim: int) -> np.ndarray:
    """Indices NOT in the given set; the observed region for inpainting."""
    keep = np.ones(dim, dtype=bool)
    keep[np.asarray(indices, dtype=int)] = False
    return np.flatnonzero(keep)


def mask_to_rle(indices) -> list[list[int]]:
    """Run-length encode a sorted index set as [start, length] pairs."""
    idx = np.sort(np.asarray(indices, dtype=int).ravel())
    runs = []
    for i in idx:
        if runs and i == runs[-1][0] + runs[-1][1]:
            runs[-1][1] += 1
        else:
            runs.append([int(i), 1])
    return runs


def rle_to_mask(runs) -> np.ndarray:
    out = []
    for start, length in runs:
        out.extend(range(start, start + length))
    return np.asarray(out, dtype=int)
