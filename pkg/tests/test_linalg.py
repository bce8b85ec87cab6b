"""Tests for the precision-matrix factorization."""

import numpy as np
import pytest
from scipy import sparse

from smoothgev.errors import SingularPrecisionError
from smoothgev.grid import build_neighborhood, build_penalty
from smoothgev.linalg import PrecisionFactor


@pytest.fixture
def spd_matrix():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(6, 6))
    return a @ a.T + 6 * np.eye(6)


def lattice_precision(make_lattice, nx, ny, ridge=0.5):
    s = build_penalty(build_neighborhood(make_lattice(nx, ny))).S.astype(float)
    return (s + ridge * sparse.identity(nx * ny)).tocsc()


class TestDense:
    """Cholesky path for small systems."""

    def test_logdet(self, spd_matrix) -> None:
        """The log-determinant matches numpy."""
        factor = PrecisionFactor(spd_matrix)
        assert factor.method == "dense"
        assert factor.logdet == pytest.approx(np.linalg.slogdet(spd_matrix)[1], rel=1e-12)

    def test_solve_and_inverse(self, spd_matrix) -> None:
        """Solves and the inverse agree with numpy."""
        factor = PrecisionFactor(spd_matrix)
        b = np.arange(6.0)
        np.testing.assert_allclose(spd_matrix @ factor.solve(b), b, atol=1e-10)
        np.testing.assert_allclose(factor.inverse(), np.linalg.inv(spd_matrix), atol=1e-12)
        np.testing.assert_allclose(factor.diag_inverse(), np.diag(np.linalg.inv(spd_matrix)), atol=1e-12)

    def test_sample_covariance(self, spd_matrix) -> None:
        """Mapping the identity gives X with X X' equal to the inverse."""
        factor = PrecisionFactor(spd_matrix)
        x = factor.sample(np.eye(6))
        np.testing.assert_allclose(x @ x.T, np.linalg.inv(spd_matrix), atol=1e-12)

    def test_not_positive_definite(self, make_lattice) -> None:
        """A shifted penalty with a negative eigenvalue is reported."""
        s = build_penalty(build_neighborhood(make_lattice(3, 3))).S.toarray() - 0.1 * np.eye(9)
        with pytest.raises(SingularPrecisionError, match="null space"):
            PrecisionFactor(s)

    def test_indefinite(self) -> None:
        """Negative eigenvalues cannot be factored."""
        with pytest.raises(SingularPrecisionError):
            PrecisionFactor(np.diag([1.0, -1.0]))

    def test_non_finite(self) -> None:
        """NaN entries are rejected."""
        with pytest.raises(SingularPrecisionError, match="non-finite"):
            PrecisionFactor(np.array([[1.0, np.nan], [np.nan, 1.0]]))

    def test_not_square(self) -> None:
        """Only square matrices are accepted."""
        with pytest.raises(ValueError, match="square"):
            PrecisionFactor(np.ones((2, 3)))


class TestSparse:
    """SuperLU path for large sparse systems."""

    def test_solve_matches_dense(self, make_lattice) -> None:
        """Sparse and dense factorizations agree."""
        a = lattice_precision(make_lattice, 8, 7)
        sparse_factor = PrecisionFactor(a, method="sparse")
        dense_factor = PrecisionFactor(a, method="dense")
        b = np.linspace(-1.0, 1.0, 56)
        np.testing.assert_allclose(sparse_factor.solve(b), dense_factor.solve(b), atol=1e-10)
        assert sparse_factor.logdet == pytest.approx(dense_factor.logdet, rel=1e-10)

    def test_sample_covariance(self, make_lattice) -> None:
        """Sparse draws have covariance A^-1."""
        a = lattice_precision(make_lattice, 5, 4)
        factor = PrecisionFactor(a, method="sparse")
        x = factor.sample(np.eye(20))
        np.testing.assert_allclose(x @ x.T, np.linalg.inv(a.toarray()), atol=1e-10)

    def test_auto_uses_dense_when_small(self, make_lattice) -> None:
        """Small systems take the dense path."""
        assert PrecisionFactor(lattice_precision(make_lattice, 3, 3)).method == "dense"

    def test_unknown_method(self, spd_matrix) -> None:
        """Only dense, sparse and auto are known."""
        with pytest.raises(ValueError, match="unknown factorization"):
            PrecisionFactor(spd_matrix, method="qr")
