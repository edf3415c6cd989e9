import numpy as np
import pytest

from fdsampler.linalg import dot, make_rng
from fdsampler.operators import (Compose, Downsample, Identity, Mask, Measurement,
                                 complement_indices, dilate_mask, make_freeform_mask,
                                 mask_fraction, mask_to_rle, rle_to_mask,
                                 synthesize_measurement)


def _ops():
    return [
        Identity(7),
        Mask([0, 3, 6], 7),
        Downsample(2, 8, 8),
        Compose([Downsample(2, 8, 8), Mask([0, 5, 15], 16)]),
    ]


@pytest.mark.parametrize("op", _ops(), ids=lambda op: type(op).__name__)
def test_adjoint_identity_oracle(op):
    # <A x, u> == <x, A^T u> on 100 random pairs, to 1e-12.
    rng = make_rng(11)
    for _ in range(100):
        x = rng.standard_normal(op.in_dim)
        u = rng.standard_normal(op.out_dim)
        assert abs(dot(op.apply(x), u) - dot(x, op.adjoint(u))) < 1e-12


@pytest.mark.parametrize("op", _ops(), ids=lambda op: type(op).__name__)
def test_as_matrix_matches_apply(op):
    rng = make_rng(12)
    a = op.as_matrix()
    assert a.shape == (op.out_dim, op.in_dim)
    x = rng.standard_normal(op.in_dim)
    assert np.allclose(a @ x, op.apply(x), atol=1e-12)
    u = rng.standard_normal(op.out_dim)
    assert np.allclose(a.T @ u, op.adjoint(u), atol=1e-12)


def test_mask_hand_example():
    op = Mask([0], 2)
    assert np.array_equal(op.apply([3.0, 5.0]), [3.0])
    assert np.array_equal(op.adjoint([7.0]), [7.0, 0.0])


def test_mask_validation():
    with pytest.raises(ValueError):
        Mask([0, 0], 3)  # duplicate indices
    with pytest.raises(ValueError):
        Mask([], 3)
    with pytest.raises(ValueError):
        Mask([3], 3)  # out of range
    with pytest.raises(ValueError):
        Mask([0], 3).apply(np.ones(4))


def test_downsample_constant_image():
    op = Downsample(2, 4, 4)
    assert np.allclose(op.apply(np.full(16, 3.0)), np.full(4, 3.0))
    # adjoint spreads each measurement over its block divided by factor^2
    assert np.allclose(op.adjoint(np.full(4, 3.0)), np.full(16, 0.75))
    with pytest.raises(ValueError):
        Downsample(3, 4, 4)


def test_compose_validation():
    with pytest.raises(ValueError):
        Compose([])
    with pytest.raises(ValueError):
        Compose([Identity(4), Identity(5)])


def test_measurement_validation():
    with pytest.raises(ValueError):
        Measurement(y=np.zeros(3), op=Identity(2))
    with pytest.raises(ValueError):
        Measurement(y=np.zeros(2), op=Identity(2), noise_std=-1.0)


def test_synthesize_measurement():
    op = Mask([1], 3)
    x0 = np.array([1.0, 2.0, 3.0])
    m = synthesize_measurement(op, x0, 0.0)
    assert np.array_equal(m.y, [2.0])
    with pytest.raises(ValueError):
        synthesize_measurement(op, x0, 0.5)  # noisy synthesis needs an rng
    m2 = synthesize_measurement(op, x0, 0.5, make_rng(13))
    assert m2.y[0] != 2.0
    assert np.array_equal(m2.y,
                          synthesize_measurement(op, x0, 0.5, make_rng(13)).y)


def test_freeform_mask_coverage_and_determinism():
    idx = make_freeform_mask(make_rng(14), 16, 16, coverage_range=(0.10, 0.20))
    frac = mask_fraction(idx, 16, 16)
    assert 0.10 <= frac <= 0.20
    idx2 = make_freeform_mask(make_rng(14), 16, 16, coverage_range=(0.10, 0.20))
    assert np.array_equal(idx, idx2)
    with pytest.raises(ValueError):
        make_freeform_mask(make_rng(14), 16, 16, coverage_range=(1.0, 1.0))


def test_dilate_single_pixel_fills_block():
    # one masked pixel anywhere in an 8x8 block dilates to the whole block
    idx = dilate_mask([3 * 8 + 5], 8, 8, block=8)
    assert np.array_equal(np.sort(idx), np.arange(64))


def test_complement_indices():
    comp = complement_indices([1, 3], 5)
    assert np.array_equal(comp, [0, 2, 4])
    assert np.array_equal(np.sort(np.concatenate([comp, [1, 3]])), np.arange(5))


def test_rle_roundtrip():
    rng = make_rng(15)
    for _ in range(20):
        n = int(rng.integers(1, 40))
        idx = np.sort(rng.choice(200, size=n, replace=False))
        runs = mask_to_rle(idx)
        assert np.array_equal(rle_to_mask(runs), idx)
    assert mask_to_rle([2, 3, 4, 9]) == [[2, 3], [9, 1]]
