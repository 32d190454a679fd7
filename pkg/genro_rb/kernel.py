# Copyright (c) 2025 Softwell Srl, Milano, Italy
# SPDX-License-Identifier: Apache-2.0
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Numeric primitives: SPD Gram factorizations, Riesz lifts, inf-sup constants.

Dense factorizations are used for reduced-scale objects, sparse direct
factorization for truth-scale Gram matrices.
"""

import logging

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve, eigh, lapack, solve_triangular, svd
from scipy.sparse.linalg import splu

from .errors import FactorizationError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
DEFAULT_DROP_TOL = 1e-10

# Largest sparse Gram that is densified to locate a failing pivot.
_PIVOT_DIAGNOSIS_LIMIT = 4000


class SpdGram:
    """Symmetric positive-definite Gram matrix with a factorization cached at build.

    The Gram matrix is the discrete Riesz operator of an inner product:
    solving with it lifts a functional to its Riesz representer.

    Attributes:
        matrix: The Gram matrix (numpy array or scipy CSC matrix).
        dimension: Number of rows (and columns).
    """

    def __init__(self, matrix):
        if sp.issparse(matrix):
            self.matrix = sp.csc_matrix(matrix, dtype=float)
        else:
            self.matrix = np.array(matrix, dtype=float, ndmin=2)
        rows, cols = self.matrix.shape
        if rows != cols:
            raise ValueError(f"Gram matrix must be square, got shape {self.matrix.shape}")
        self.dimension = rows
        self._lower = None
        self._lu = None
        self._check_symmetry()
        if self.dimension:
            self._factor()

    @classmethod
    def identity(cls, n: int) -> "SpdGram":
        """Euclidean Gram of dimension n."""
        return cls(np.eye(n))

    @property
    def is_sparse(self) -> bool:
        return self._lu is not None or sp.issparse(self.matrix)

    @property
    def lower(self) -> np.ndarray:
        """Dense lower Cholesky factor L with G = L Lᵀ."""
        if self._lower is None:
            self._lower = self._dense_cholesky(self.toarray())
        return self._lower

    def toarray(self) -> np.ndarray:
        if sp.issparse(self.matrix):
            return self.matrix.toarray()
        return self.matrix

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve G x = rhs for a vector or a matrix of right-hand sides."""
        rhs = np.asarray(rhs, dtype=float)
        if self.dimension == 0:
            return np.zeros_like(rhs)
        if self._lu is not None:
            return self._lu.solve(rhs)
        return cho_solve((self._lower, True), rhs)

    def _check_symmetry(self) -> None:
        if self.dimension == 0:
            return
        if sp.issparse(self.matrix):
            diff = self.matrix - self.matrix.T
            asym = abs(diff).max() if diff.nnz else 0.0
            scale = abs(self.matrix).max()
        else:
            asym = np.max(np.abs(self.matrix - self.matrix.T))
            scale = np.max(np.abs(self.matrix))
        if asym > SYMMETRY_TOL * scale:
            raise FactorizationError(
                f"Gram matrix is not symmetric: max |G_ij - G_ji| = {asym:.3e} "
                f"exceeds {SYMMETRY_TOL:g} * max|G| = {SYMMETRY_TOL * scale:.3e}"
            )

    def _factor(self) -> None:
        if not sp.issparse(self.matrix):
            self._lower = self._dense_cholesky(self.matrix)
            return
        try:
            lu = splu(
                self.matrix,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise FactorizationError(
                f"sparse Gram matrix is singular: {exc}", pivot=self._locate_pivot()
            ) from exc
        pivots = lu.U.diagonal()
        if not np.array_equal(lu.perm_r, lu.perm_c) or np.any(pivots <= 0):
            pivot = self._locate_pivot()
            raise FactorizationError(
                f"sparse Gram matrix is not positive definite (failing pivot {pivot})",
                pivot=pivot,
            )
        self._lu = lu

    def _locate_pivot(self) -> int | None:
        if self.dimension > _PIVOT_DIAGNOSIS_LIMIT:
            return None
        try:
            self._dense_cholesky(self.toarray())
        except FactorizationError as exc:
            return exc.pivot
        return None

    @staticmethod
    def _dense_cholesky(matrix: np.ndarray) -> np.ndarray:
        factor, info = lapack.dpotrf(matrix, lower=1, clean=1, overwrite_a=0)
        if info > 0:
            pivot = info - 1
            raise FactorizationError(
                f"Gram matrix is not positive definite: pivot {pivot} is not positive",
                pivot=pivot,
            )
        if info < 0:
            raise ValueError(f"illegal argument {-info} passed to the Cholesky routine")
        return factor


def _check_length(gram: SpdGram, vector: np.ndarray, what: str) -> None:
    if vector.shape[0] != gram.dimension:
        raise ValueError(
            f"{what} has length {vector.shape[0]}, gram dimension is {gram.dimension}"
        )


def spd_solve(gram: SpdGram, rhs) -> np.ndarray:
    """Riesz lift: solve gram · x = rhs.

    Args:
        gram: Factored Gram matrix.
        rhs: Right-hand side vector or matrix with one column per right-hand side.

    Returns:
        Solution with the same shape as rhs.

    Raises:
        ValueError: If rhs does not match the Gram dimension.
    """
    rhs = np.asarray(rhs, dtype=float)
    _check_length(gram, rhs, "rhs")
    return gram.solve(rhs)


def dual_norm(gram: SpdGram, functional) -> float:
    """Dual norm √(rᵀ G⁻¹ r) of a functional in the metric of gram."""
    r = np.asarray(functional, dtype=float)
    _check_length(gram, r, "functional")
    if not np.any(r):
        return 0.0
    return float(np.sqrt(max(r @ gram.solve(r), 0.0)))


def _as_dense(matrix) -> np.ndarray:
    if sp.issparse(matrix):
        return matrix.toarray()
    return np.array(matrix, dtype=float, ndmin=2)


def _check_pair(cross: np.ndarray, gram_test: SpdGram, gram_trial: SpdGram) -> None:
    expected = (gram_test.dimension, gram_trial.dimension)
    if cross.shape != expected:
        raise ValueError(f"cross matrix has shape {cross.shape}, Grams expect {expected}")
    if expected[0] < expected[1]:
        raise ValueError(
            f"test dimension {expected[0]} is smaller than trial dimension {expected[1]}"
        )


def _normal_eigenpairs(cross, gram_test, gram_trial):
    normal = cross.T @ gram_test.solve(cross)
    normal = 0.5 * (normal + normal.T)
    return eigh(normal, gram_trial.toarray())


def _whitened(cross, gram_test, gram_trial):
    whitened = solve_triangular(gram_test.lower, cross, lower=True)
    return solve_triangular(gram_trial.lower, whitened.T, lower=True).T


def generalized_singular_values(cross, gram_test: SpdGram, gram_trial: SpdGram) -> np.ndarray:
    """All singular values of cross measured from the trial to the test metric.

    Dense Grams go through the singular values of L_test⁻¹ · cross · L_trial⁻ᵀ;
    sparse Grams through the generalized eigenproblem of the normal matrix.

    Returns:
        Singular values in descending order.
    """
    cross = _as_dense(cross)
    _check_pair(cross, gram_test, gram_trial)
    if gram_trial.dimension == 0:
        return np.zeros(0)
    if gram_test.is_sparse or gram_trial.is_sparse:
        values, _ = _normal_eigenpairs(cross, gram_test, gram_trial)
        return np.sqrt(np.clip(values[::-1], 0.0, None))
    return svd(_whitened(cross, gram_test, gram_trial), compute_uv=False)


def min_generalized_singular_pair(
    cross, gram_test: SpdGram, gram_trial: SpdGram
) -> tuple[float, np.ndarray]:
    """Discrete inf-sup constant and its minimizing trial vector.

    Returns:
        (beta, w) where w has unit trial norm and realizes
        sup_v vᵀ·cross·w / ‖v‖_test = beta.

    Raises:
        ValueError: On shape mismatch or when n_test < n_trial.
    """
    cross = _as_dense(cross)
    _check_pair(cross, gram_test, gram_trial)
    if gram_trial.dimension == 0:
        return 1.0, np.zeros(0)
    if gram_test.is_sparse or gram_trial.is_sparse:
        values, vectors = _normal_eigenpairs(cross, gram_test, gram_trial)
        beta = float(np.sqrt(max(values[0], 0.0)))
        w = vectors[:, 0]
    else:
        _, sigma, vt = svd(_whitened(cross, gram_test, gram_trial), full_matrices=False)
        beta = float(sigma[-1])
        w = solve_triangular(gram_trial.lower.T, vt[-1], lower=False)
    if w[np.argmax(np.abs(w))] < 0:
        w = -w
    return beta, w


def min_generalized_singular(cross, gram_test: SpdGram, gram_trial: SpdGram) -> float:
    """Smallest singular value of cross from the trial to the test metric."""
    return min_generalized_singular_pair(cross, gram_test, gram_trial)[0]


def gram_orthonormalize(
    basis, gram: SpdGram, tol: float = DEFAULT_DROP_TOL, offset: int = 0
) -> np.ndarray:
    """Gram-orthonormalize the columns of basis by modified Gram-Schmidt.

    Every column gets a second full orthogonalization pass. A column whose
    norm after projection falls below tol times its original norm is dropped;
    the order of the remaining columns is preserved.

    Args:
        basis: Coefficient matrix (N × k) or a single vector.
        gram: Gram matrix of the inner product.
        tol: Relative drop tolerance.
        offset: Number of leading columns already orthonormal; they are kept
            unchanged and only the trailing columns are processed.

    Returns:
        Coefficient matrix with G-orthonormal columns (possibly fewer than k).
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    columns = np.array(basis, dtype=float, copy=True)
    if columns.ndim == 1:
        columns = columns[:, None]
    _check_length(gram, columns, "basis")
    kept = [columns[:, j] for j in range(offset)]
    kept_images = [gram.matvec(q) for q in kept]
    for j in range(offset, columns.shape[1]):
        v = columns[:, j].copy()
        original = np.sqrt(max(v @ gram.matvec(v), 0.0))
        if original == 0.0:
            logger.debug("dropping zero column %d", j)
            continue
        for _ in range(2):
            for q, gq in zip(kept, kept_images):
                v -= (gq @ v) * q
        image = gram.matvec(v)
        norm = np.sqrt(max(v @ image, 0.0))
        if norm < tol * original:
            logger.debug("dropping dependent column %d (relative norm %.3e)", j, norm / original)
            continue
        kept.append(v / norm)
        kept_images.append(image / norm)
    if not kept:
        return np.zeros((gram.dimension, 0))
    return np.column_stack(kept)
