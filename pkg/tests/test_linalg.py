import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from maplab.linalg import (
    DimensionMismatch,
    NotPSD,
    NotSymmetric,
    cholesky_sqrt,
    is_lower_triangular,
    max_eigenvalue,
    triangularize,
)


class TestCholeskySqrt:
    def test_identity(self):
        np.testing.assert_allclose(cholesky_sqrt(np.eye(3)), np.eye(3), atol=1e-12)

    def test_diagonal(self):
        np.testing.assert_allclose(cholesky_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-12)

    def test_reconstruction_2x2(self):
        m = np.array([[2.0, 1.0], [1.0, 2.0]])
        s = cholesky_sqrt(m)
        assert is_lower_triangular(s)
        np.testing.assert_allclose(s @ s.T, m, atol=1e-9)

    def test_semidefinite_input(self):
        # rank-1 PSD matrix: plain Cholesky fails, eigen fallback must not
        v = np.array([1.0, 2.0, 3.0])
        m = np.outer(v, v)
        s = cholesky_sqrt(m)
        assert is_lower_triangular(s, tol=1e-12)
        np.testing.assert_allclose(s @ s.T, m, atol=1e-9)
        assert np.all(np.diag(s) >= 0.0)

    def test_zero_matrix(self):
        s = cholesky_sqrt(np.zeros((2, 2)))
        np.testing.assert_allclose(s, np.zeros((2, 2)), atol=1e-12)

    def test_rejects_asymmetric(self):
        with pytest.raises(NotSymmetric):
            cholesky_sqrt(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_rejects_indefinite(self):
        with pytest.raises(NotPSD):
            cholesky_sqrt(np.diag([1.0, -1.0]))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (4, 4), elements=st.floats(-5, 5, allow_nan=False)))
    def test_psd_reconstruction_property(self, a):
        m = a @ a.T  # PSD by construction
        s = cholesky_sqrt(m, sym_tol=1e-8)
        assert is_lower_triangular(s, tol=1e-12)
        np.testing.assert_allclose(s @ s.T, m, atol=1e-9)
        assert np.all(np.diag(s) >= 0.0)


class TestTriangularize:
    def test_identity_passthrough(self):
        np.testing.assert_allclose(triangularize(np.eye(2)), np.eye(2), atol=1e-12)

    def test_row_vector(self):
        # QR of [3, 4]^T gives R = 5; 5^2 = 3^2 + 4^2
        b = triangularize(np.array([[3.0, 4.0]]))
        np.testing.assert_allclose(b, np.array([[5.0]]), atol=1e-12)

    def test_random_wide_matrix(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(3, 6))
        b = triangularize(a)
        assert b.shape == (3, 3)
        assert is_lower_triangular(b)
        assert np.max(np.abs(b @ b.T - a @ a.T)) < 1e-9

    def test_idempotent_on_lower_triangular(self):
        rng = np.random.default_rng(3)
        l = np.tril(rng.normal(size=(4, 4)))
        l[np.diag_indices(4)] = np.abs(l[np.diag_indices(4)]) + 0.1
        np.testing.assert_allclose(triangularize(l), l, atol=1e-12)

    def test_batched(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(5, 3, 7))
        b = triangularize(a)
        assert b.shape == (5, 3, 3)
        for i in range(5):
            np.testing.assert_allclose(b[i] @ b[i].T, a[i] @ a[i].T, atol=1e-9)
            assert is_lower_triangular(b[i])

    def test_rejects_tall_matrix(self):
        with pytest.raises(DimensionMismatch):
            triangularize(np.zeros((3, 2)))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 8), elements=st.floats(-10, 10, allow_nan=False)))
    def test_gram_preservation_property(self, a):
        b = triangularize(a)
        np.testing.assert_allclose(b @ b.T, a @ a.T, atol=1e-9)
        assert is_lower_triangular(b)
        assert np.all(np.diag(b) >= 0.0)


class TestMaxEigenvalue:
    def test_diagonal(self):
        assert max_eigenvalue(np.diag([-1.0, -2.0])) == pytest.approx(-1.0)

    def test_zero(self):
        assert max_eigenvalue(np.zeros((2, 2))) == pytest.approx(0.0, abs=1e-15)

    def test_offdiagonal(self):
        # characteristic polynomial lambda^2 - 1
        m = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert max_eigenvalue(m) == pytest.approx(1.0, rel=1e-8)

    def test_rejects_asymmetric(self):
        with pytest.raises(NotSymmetric):
            max_eigenvalue(np.array([[0.0, 1.0], [0.0, 0.0]]))
