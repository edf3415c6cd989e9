import numpy as np
import pytest

from fdsampler.linalg import (SpdMatrix, axpy, cholesky_solve, dot, ensure_finite,
                              gaussian_sample, make_rng, matvec, norm)


def test_make_rng_is_deterministic():
    a = make_rng(7, 3).standard_normal(16)
    b = make_rng(7, 3).standard_normal(16)
    assert np.array_equal(a, b)


def test_make_rng_streams_are_distinct():
    a = make_rng(7, 0).standard_normal(16)
    b = make_rng(7, 1).standard_normal(16)
    c = make_rng(8, 0).standard_normal(16)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_gaussian_sample_moments():
    # law of large numbers on 200k draws: mean near 0, variance near 1
    x = gaussian_sample(make_rng(0), 200_000)
    assert x.shape == (200_000,)
    assert abs(x.mean()) < 0.02
    assert abs(x.var() - 1.0) < 0.02


def test_spd_matrix_solve_matches_dense_oracle():
    rng = make_rng(1)
    a = rng.standard_normal((6, 6))
    mat = a @ a.T + 6 * np.eye(6)
    b = rng.standard_normal(6)
    spd = SpdMatrix(mat)
    assert np.allclose(spd.solve(b), np.linalg.solve(mat, b), atol=1e-12)
    assert np.allclose(spd.matvec(b), mat @ b, atol=1e-12)
    sign, logdet = np.linalg.slogdet(mat)
    assert sign > 0
    assert spd.log_det() == pytest.approx(logdet, abs=1e-10)


def test_spd_matrix_rejects_non_spd():
    with pytest.raises(ValueError):
        SpdMatrix(np.array([[1.0, 0.0], [0.0, -1.0]]))


def test_cholesky_solve_matches_numpy():
    rng = make_rng(2)
    a = rng.standard_normal((5, 5))
    mat = a @ a.T + 5 * np.eye(5)
    b = rng.standard_normal(5)
    assert np.allclose(cholesky_solve(mat, b), np.linalg.solve(mat, b), atol=1e-12)


def test_matvec_and_dot_and_norm_and_axpy():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    v = np.array([1.0, -1.0])
    assert np.allclose(matvec(m, v), [-1.0, -1.0])
    assert dot(v, v) == pytest.approx(2.0)
    assert norm(v) == pytest.approx(np.sqrt(2.0))
    assert np.allclose(axpy(2.0, v, np.array([1.0, 1.0])), [3.0, -1.0])


def test_matvec_shape_mismatch():
    with pytest.raises(ValueError):
        matvec(np.eye(2), np.ones(3))


def test_ensure_finite():
    x = np.array([1.0, 2.0])
    assert ensure_finite(x, "ok") is x
    with pytest.raises(ValueError, match="bad-tensor"):
        ensure_finite(np.array([1.0, np.nan]), "bad-tensor")
