"""
Factorization of symmetric positive definite precision matrices.

Small systems use a dense Cholesky factor. Large sparse systems use SuperLU
with a symmetric fill-reducing ordering and diagonal pivoting, which yields an
LDL^T factorization when the row and column permutations agree.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg as sla
from scipy import sparse
from scipy.sparse import linalg as spla

from smoothgev.errors import SingularPrecisionError

DENSE_LIMIT = 1500

_NULL_SPACE_HINT = (
    "the precision matrix is not positive definite; constrain the unpenalized "
    "null space (for example fix one constant mode per grid component) or "
    "increase the smoothing parameters"
)


class PrecisionFactor:
    """Factor ``A = P L D L^T P^T`` of a symmetric positive definite matrix.

    Provides the log-determinant, linear solves, the inverse and the map
    from standard normal vectors to draws with covariance ``A^{-1}``.
    """

    def __init__(self, matrix, method: str = "auto"):
        n = matrix.shape[0]
        if matrix.shape != (n, n):
            raise ValueError(f"precision must be square, got shape {matrix.shape}")
        self.n = n
        if method == "auto":
            method = "dense" if n <= DENSE_LIMIT or not sparse.issparse(matrix) else "sparse"
        if method == "sparse":
            try:
                self._factor_sparse(sparse.csc_matrix(matrix))
                return
            except _OrderingMismatch:
                method = "dense"
        if method != "dense":
            raise ValueError(f"unknown factorization method {method!r}")
        dense = matrix.toarray() if sparse.issparse(matrix) else np.asarray(matrix, dtype=float)
        self._factor_dense(dense)

    def _factor_dense(self, a: np.ndarray) -> None:
        self.method = "dense"
        if not np.all(np.isfinite(a)):
            raise SingularPrecisionError("precision contains non-finite entries")
        try:
            self._chol = sla.cholesky(a, lower=True)
        except sla.LinAlgError as exc:
            raise SingularPrecisionError(_NULL_SPACE_HINT) from exc
        diag = np.diag(self._chol)
        if np.any(diag <= 0):
            raise SingularPrecisionError(_NULL_SPACE_HINT)
        self.logdet = float(2.0 * np.sum(np.log(diag)))

    def _factor_sparse(self, a: sparse.csc_matrix) -> None:
        self.method = "sparse"
        if not np.all(np.isfinite(a.data)):
            raise SingularPrecisionError("precision contains non-finite entries")
        try:
            lu = spla.splu(
                a,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise SingularPrecisionError(_NULL_SPACE_HINT) from exc
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise _OrderingMismatch()
        d = lu.U.diagonal()
        if np.any(~np.isfinite(d)) or np.any(d <= 0):
            raise SingularPrecisionError(_NULL_SPACE_HINT)
        self._lu = lu
        self._d = d
        self._lt = lu.L.T.tocsr()
        self._pc = sparse.csc_matrix((np.ones(self.n), (np.arange(self.n), lu.perm_c)))
        self.logdet = float(np.sum(np.log(d)))

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self.method == "dense":
            return sla.cho_solve((self._chol, True), b)
        return self._lu.solve(b)

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.n))

    def diag_inverse(self) -> np.ndarray:
        return np.diag(self.inverse()).copy()

    def sample(self, z: np.ndarray) -> np.ndarray:
        """Map standard normal ``z`` (shape ``(n,)`` or ``(n, k)``) to N(0, A^{-1}) draws."""
        z = np.asarray(z, dtype=float)
        if self.method == "dense":
            return sla.solve_triangular(self._chol, z, lower=True, trans="T")
        scaled = z / (np.sqrt(self._d)[:, None] if z.ndim == 2 else np.sqrt(self._d))
        v = spla.spsolve_triangular(self._lt, scaled, lower=False, unit_diagonal=True)
        return self._pc @ v


class _OrderingMismatch(Exception):
    pass
