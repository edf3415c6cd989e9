"""Synthetic desk-scale image fixtures.

Grid textures: 16x16 single-channel images in [-1, 1] with bright lines
on a dark background, drawn at every phase offset of two line spacings.
The novel-value center patch used by the direction-comparison experiment
carries a gray level that never appears in the training set.
"""

from __future__ import annotations

import numpy as np

GRID_SIZE = 16
GRID_BG = -0.8
GRID_FG = 0.8
NOVEL_GRAY = 0.3  # never present in the grid dataset


def make_grid_image(spacing: int = 4, phase_row: int = 0, phase_col: int = 0,
                    size: int = GRID_SIZE) -> np.ndarray:
    """One black-and-white grid image, shape (size*size,) flattened."""
    img = np.full((size, size), GRID_BG)
    img[phase_row % spacing::spacing, :] = GRID_FG
    img[:, phase_col % spacing::spacing] = GRID_FG
    return img.ravel()


def make_grid_dataset(size: int = GRID_SIZE, jitter: float = 0.02,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """Two-texture grid dataset: all phases of spacing-4 and spacing-8 grids.

    Optional jitter adds small Gaussian perturbations so the manifold has
    nonzero thickness; each base image is repeated 4x when jitter > 0.
    """
    images = []
    for spacing in (4, 8):
        for pr in range(spacing):
            for pc in range(spacing):
                images.append(make_grid_image(spacing, pr, pc, size))
    base = np.stack(images)
    if jitter > 0:
        if rng is None:
            raise ValueError("rng required when jitter > 0")
        reps = [base + jitter * rng.standard_normal(base.shape) for _ in range(4)]
        return np.concatenate(reps)
    return base


def center_patch_indices(size: int = GRID_SIZE, patch: int = 6) -> np.ndarray:
    """Flat indices of the centered patch x patch square."""
    lo = (size - patch) // 2
    rows, cols = np.meshgrid(np.arange(lo, lo + patch), np.arange(lo, lo + patch),
                             indexing="ij")
    return (rows * size + cols).ravel()


def box_blur(img_flat: np.ndarray, size: int = GRID_SIZE, k: int = 3) -> np.ndarray:
    """k x k box blur with edge replication, on a flattened square image."""
    img = np.asarray(img_flat, dtype=float).reshape(size, size)
    pad = k // 2
    padded = np.pad(img, pad, mode="edge")
    out = np.zeros_like(img)
    for dr in range(k):
        for dc in range(k):
            out += padded[dr:dr + size, dc:dc + size]
    return (out / (k * k)).ravel()


def two_region_image(size: int = GRID_SIZE, left_value: float = 0.2,
                     right_value: float = 0.8) -> np.ndarray:
    """Left-half/right-half constant image used by the layer-inference fixture."""
    img = np.full((size, size), right_value)
    img[:, : size // 2] = left_value
    return img.ravel()


def two_region_true_mask(size: int = GRID_SIZE) -> np.ndarray:
    """1 on the left half (layer 1), 0 on the right half."""
    m = np.zeros((size, size))
    m[:, : size // 2] = 1.0
    return m.ravel()
