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

"""
Surrogate greedy construction of reduced trial spaces.

The surrogate at a parameter is the dual norm ‖f - B_y u_n(y)‖_V' of the
reduced residual, evaluated offline-online from precomputed inner products
of the affine images of the basis. Without the 1/c₁ prefactor it equals the
error in the renormed trial norm.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, LinAlgWarning, eigh, eigvalsh, lu_factor, lu_solve, solve

from .errors import CoercivityLossError
from .kernel import DEFAULT_DROP_TOL, SpdGram, generalized_singular_values, gram_orthonormalize
from .trace import GreedyTrace, TraceRow
from .truth import ParameterPoint, TruthModel, truth_solve, u_hat_norm

logger = logging.getLogger(__name__)

SGA_COLUMNS = ("n", "y_selected", "surrogate_max")
SGA_VALIDATION_COLUMNS = ("true_error_max", "gamma_hat", "sigma", "width_lower")

_CANCELLATION_FLOOR = np.sqrt(np.finfo(float).eps)
_PIVOT_FLOOR = np.finfo(float).eps


@dataclass(frozen=True)
class ReducedSpace:
    """Gram-orthonormal basis columns and the parameters that generated them."""

    basis: np.ndarray
    parameters: tuple = ()

    @property
    def dimension(self) -> int:
        return self.basis.shape[1]

    @property
    def n_truth(self) -> int:
        return self.basis.shape[0]

    @classmethod
    def empty(cls, n_truth: int) -> "ReducedSpace":
        return cls(np.zeros((n_truth, 0)), ())

    def expand(self, coefficients) -> np.ndarray:
        """Truth coefficients of Σ c_j φ_j."""
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape[0] != self.dimension:
            raise ValueError(
                f"reduced vector has length {coefficients.shape[0]}, "
                f"space has dimension {self.dimension}"
            )
        return self.basis @ coefficients

    def extend(self, vectors, parameter, gram: SpdGram, tol: float = DEFAULT_DROP_TOL):
        """
        Orthonormalize new vectors against the basis and append them.

        Args:
            vectors: Truth vector or N × k matrix of candidates
            parameter: Parameter recorded for each appended column
            gram: Inner product of the space
            tol: Relative drop tolerance

        Returns:
            Extended ReducedSpace, or None when every candidate was dropped
        """
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim == 1:
            vectors = vectors[:, None]
        merged = gram_orthonormalize(
            np.column_stack([self.basis, vectors]), gram, tol=tol, offset=self.dimension
        )
        added = merged.shape[1] - self.dimension
        if added == 0:
            return None
        return ReducedSpace(merged, self.parameters + (parameter,) * added)


@dataclass(frozen=True)
class ResidualOfflineData:
    """
    Parameter-independent inner products for the residual dual norm.

    Attributes:
        gram_V: Test Gram the dual norm is measured in
        rhs: Load functional
        riesz_rhs: G_V⁻¹ rhs
        images: (M, N_V, n) affine images A_k φ_j
        lifts: (M, N_V, n) Riesz lifts G_V⁻¹ A_k φ_j
        ff: ‖f‖²_V'
        cross: (M, n) inner products (f, A_k φ_j)_V'
        blocks: (M, n, M, n) inner products (A_k φ_i, A_k' φ_j)_V'
    """

    gram_V: SpdGram
    rhs: np.ndarray
    riesz_rhs: np.ndarray
    images: np.ndarray
    lifts: np.ndarray
    ff: float
    cross: np.ndarray
    blocks: np.ndarray

    @property
    def n_terms(self) -> int:
        return self.images.shape[0]

    @property
    def dimension(self) -> int:
        return self.images.shape[2]

    @property
    def fA(self) -> np.ndarray:
        return self.cross

    @property
    def AA(self) -> np.ndarray:
        """(M·n) × (M·n) matrix, row index k·n + i."""
        size = self.n_terms * self.dimension
        return self.blocks.reshape(size, size)

    @classmethod
    def build(cls, model: TruthModel, basis: np.ndarray) -> "ResidualOfflineData":
        riesz_rhs = model.gram_V.solve(model.rhs)
        images = np.zeros((model.n_terms, model.n_test, 0))
        data = cls(
            gram_V=model.gram_V,
            rhs=model.rhs,
            riesz_rhs=riesz_rhs,
            images=images,
            lifts=images.copy(),
            ff=float(model.rhs @ riesz_rhs),
            cross=np.zeros((model.n_terms, 0)),
            blocks=np.zeros((model.n_terms, 0, model.n_terms, 0)),
        )
        return data.extend(model, basis)

    def extend(self, model: TruthModel, columns: np.ndarray) -> "ResidualOfflineData":
        """New data with trailing basis columns appended; existing entries are copied."""
        columns = np.asarray(columns, dtype=float)
        if columns.ndim == 1:
            columns = columns[:, None]
        result = self
        for j in range(columns.shape[1]):
            result = result._append(model, columns[:, j])
        return result

    def _append(self, model: TruthModel, phi: np.ndarray) -> "ResidualOfflineData":
        n, terms = self.dimension, self.n_terms
        image = np.stack([op @ phi for op in model.affine_ops])
        lift = self.gram_V.solve(image.T).T
        images = np.concatenate([self.images, image[:, :, None]], axis=2)
        lifts = np.concatenate([self.lifts, lift[:, :, None]], axis=2)

        # column[k, i, l] = (A_k φ_i, A_l φ_new)_V'
        column = np.einsum("kai,la->kil", images, lift)
        corner = column[:, n, :]
        column[:, n, :] = 0.5 * (corner + corner.T)
        blocks = np.zeros((terms, n + 1, terms, n + 1))
        blocks[:, :n, :, :n] = self.blocks
        blocks[:, :, :, n] = column
        blocks[:, n, :, :] = column.transpose(2, 0, 1)

        cross = np.concatenate([self.cross, (lift @ self.rhs)[:, None]], axis=1)
        return ResidualOfflineData(
            gram_V=self.gram_V,
            rhs=self.rhs,
            riesz_rhs=self.riesz_rhs,
            images=images,
            lifts=lifts,
            ff=self.ff,
            cross=cross,
            blocks=blocks,
        )

    def truncate(self, n: int) -> "ResidualOfflineData":
        """Data of the first n basis columns."""
        if not 0 <= n <= self.dimension:
            raise ValueError(f"cannot truncate {self.dimension} columns to {n}")
        return ResidualOfflineData(
            gram_V=self.gram_V,
            rhs=self.rhs,
            riesz_rhs=self.riesz_rhs,
            images=self.images[:, :, :n],
            lifts=self.lifts[:, :, :n],
            ff=self.ff,
            cross=self.cross[:, :n],
            blocks=self.blocks[:, :n, :, :n],
        )

    def residual(self, theta, c) -> tuple[np.ndarray, np.ndarray]:
        """Truth residual f - Σθ_k A_k Φc and its Riesz lift."""
        return (
            self.rhs - np.einsum("k,kai,i->a", theta, self.images, c),
            self.riesz_rhs - np.einsum("k,kai,i->a", theta, self.lifts, c),
        )


def surrogate_eval(data: ResidualOfflineData, theta, c) -> float:
    """
    Offline-online dual residual norm √max(0, ff - 2θᵀ fA c + xᵀ AA x), x = θ ⊗ c.

    Raises:
        ValueError: If theta or c do not match the offline data
    """
    theta = np.asarray(theta, dtype=float)
    c = np.asarray(c, dtype=float)
    if theta.shape != (data.n_terms,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({data.n_terms},)")
    if c.shape != (data.dimension,):
        raise ValueError(f"coefficients have shape {c.shape}, expected ({data.dimension},)")
    x = np.kron(theta, c)
    value = data.ff - 2.0 * theta @ data.cross @ c + x @ data.AA @ x
    return float(np.sqrt(max(value, 0.0)))


def residual_norm(data: ResidualOfflineData, theta, c) -> float:
    """surrogate_eval with a truth-space fallback below the cancellation floor."""
    value = surrogate_eval(data, theta, c)
    if value >= _CANCELLATION_FLOOR * np.sqrt(data.ff):
        return value
    residual, lifted = data.residual(np.asarray(theta, float), np.asarray(c, float))
    return float(np.sqrt(max(residual @ lifted, 0.0)))


@dataclass(frozen=True)
class GalerkinBlocks:
    """Reduced Galerkin matrices Φᵀ Pᵀ A_k Φ and load Φᵀ Pᵀ f."""

    matrices: np.ndarray
    rhs: np.ndarray


def galerkin_blocks(model: TruthModel, space: ReducedSpace) -> GalerkinBlocks:
    restricted = [model.prolongation.T @ op for op in model.affine_ops]
    matrices = np.stack([space.basis.T @ (op @ space.basis) for op in restricted])
    return GalerkinBlocks(matrices, space.basis.T @ (model.prolongation.T @ model.rhs))


def galerkin_reduced_solve(
    model: TruthModel,
    space: ReducedSpace,
    p: ParameterPoint,
    blocks: GalerkinBlocks | None = None,
) -> np.ndarray:
    """
    Galerkin reduced coefficients c(y) from the n × n system Σθ_k Φᵀ Pᵀ A_k Φ.

    Raises:
        ValueError: If the space is empty
        CoercivityLossError: If the reduced matrix is singular
    """
    if space.dimension == 0:
        raise ValueError("Galerkin reduced solve needs a nonempty space")
    if blocks is None:
        blocks = galerkin_blocks(model, space)
    matrix = np.einsum("k,kij->ij", model.theta(p), blocks.matrices)
    reason = None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", LinAlgWarning)
            factors = lu_factor(matrix)
    except (LinAlgError, LinAlgWarning, ValueError) as exc:
        reason = str(exc)
    else:
        # a zero or tiny pivot relative to the largest one means rank loss
        pivots = np.abs(np.diag(factors[0]))
        if not np.all(np.isfinite(pivots)) or pivots.min() <= (
            _PIVOT_FLOOR * space.dimension * pivots.max()
        ):
            reason = f"smallest LU pivot {pivots.min():.3g} of largest {pivots.max():.3g}"
    if reason is None:
        coeffs = lu_solve(factors, blocks.rhs)
        if np.all(np.isfinite(coeffs)):
            return coeffs
        reason = "non-finite reduced coefficients"
    raise CoercivityLossError(
        f"Galerkin reduced matrix of dimension {space.dimension} is singular at "
        f"y={p.y:.6g}, eps={p.epsilon:g} ({reason}): use the stabilized saddle solver"
    )


@dataclass(frozen=True)
class CoercivityConstants:
    """Discrete coercivity c₁ and continuity C₁ of the Galerkin form in the trial norm."""

    c1: float
    C1: float

    @property
    def gamma(self) -> float:
        """Weakness c₁/C₁ of the surrogate greedy, 0 when the form is not coercive."""
        return max(self.c1, 0.0) / self.C1


def coercivity_constants(model: TruthModel, points: list[ParameterPoint]) -> CoercivityConstants:
    gram = model.gram_U.toarray()
    c1, C1 = np.inf, 0.0
    for p in points:
        form = model.galerkin_operator(p).toarray()
        c1 = min(c1, float(eigvalsh(0.5 * (form + form.T), gram)[0]))
        C1 = max(C1, float(generalized_singular_values(form, model.gram_U, model.gram_U)[0]))
    return CoercivityConstants(c1, C1)


def best_approximation_error(
    model: TruthModel,
    space: ReducedSpace,
    p: ParameterPoint,
    u,
    data: ResidualOfflineData | None = None,
) -> float:
    """Distance from u to the space in the renormed norm ‖B_p ·‖_V'."""
    if space.dimension == 0:
        return u_hat_norm(model, p, u)
    if data is None:
        data = ResidualOfflineData.build(model, space.basis)
    theta = model.theta(p)
    image = np.einsum("k,kai->ai", theta, data.images)
    lift = np.einsum("k,kai->ai", theta, data.lifts)
    normal = image.T @ lift
    bu = sum(coefficient * (op @ u) for coefficient, op in zip(theta, model.affine_ops))
    c = solve(0.5 * (normal + normal.T), lift.T @ bu, assume_a="pos")
    return u_hat_norm(model, p, u - space.expand(c))


def snapshot_width_lower(snapshots: np.ndarray, gram: SpdGram) -> np.ndarray:
    """
    Root-mean-square POD tails √(Σ_{i>n} s_i²/K) of a snapshot set, n = 0..K.

    Each value bounds from below the n-width of the set, hence the greedy
    error σ_n over the same set.
    """
    correlation = snapshots.T @ gram.matvec(snapshots)
    eigenvalues = np.clip(eigh(0.5 * (correlation + correlation.T), eigvals_only=True), 0.0, None)
    tails = np.cumsum(eigenvalues)[::-1]
    return np.sqrt(np.append(tails, 0.0) / snapshots.shape[1])


@dataclass(frozen=True)
class TruthSweep:
    """Truth solutions over the training grid, computed once for validation."""

    solutions: np.ndarray
    width_lower: np.ndarray


def truth_sweep(model: TruthModel, grid: list[ParameterPoint]) -> TruthSweep:
    solutions = np.column_stack([truth_solve(model, p)[0] for p in grid])
    return TruthSweep(solutions, snapshot_width_lower(solutions, model.gram_U))


def projection_errors(space: ReducedSpace, gram: SpdGram, vectors: np.ndarray) -> np.ndarray:
    difference = vectors - space.basis @ (space.basis.T @ gram.matvec(vectors))
    squared = np.einsum("ak,ak->k", difference, gram.matvec(difference))
    return np.sqrt(np.clip(squared, 0.0, None))


def _validate_row(row, model, grid, space, sweep, reduced_solutions) -> None:
    errors = [
        u_hat_norm(model, p, sweep.solutions[:, i] - u)
        for i, (p, u) in enumerate(zip(grid, reduced_solutions))
    ]
    distances = projection_errors(space, model.gram_U, sweep.solutions)
    row.true_error_max = float(max(errors))
    row.sigma = float(distances.max())
    row.width_lower = float(sweep.width_lower[min(space.dimension, len(sweep.width_lower) - 1)])
    if row.selected is not None and row.sigma > 0:
        row.gamma_hat = float(distances[row.selected] / row.sigma)


def sga_run(
    model: TruthModel,
    grid: list[ParameterPoint],
    tol: float,
    n_max: int,
    validate: bool = False,
) -> tuple[ReducedSpace, GreedyTrace]:
    """
    Surrogate greedy algorithm with Galerkin reduced solutions.

    Row n holds the largest surrogate over the grid for the n-dimensional
    space and the angle selected next. The run stops when the largest
    surrogate is at most tol ('tol'), at n = n_max ('budget') or when the
    new snapshot lies in the current space ('exhausted').

    Args:
        model: Truth model
        grid: Training parameters
        tol: Surrogate tolerance
        n_max: Largest reduced dimension
        validate: Sweep the truth solutions over the grid and record the
            true errors, the projection errors σ_n, their lower width bound
            and the measured weakness γ̂ of each selection

    Returns:
        (space, trace)
    """
    if not grid:
        raise ValueError("training grid is empty")
    if not 0 <= n_max <= model.n_trial:
        raise ValueError(f"n_max must lie in [0, {model.n_trial}], got {n_max}")
    columns = SGA_COLUMNS + (SGA_VALIDATION_COLUMNS if validate else ())
    trace = GreedyTrace(columns, metadata={"tol": tol, "n_max": n_max, "grid_size": len(grid)})
    thetas = [model.theta(p) for p in grid]
    sweep = truth_sweep(model, grid) if validate else None
    if validate:
        constants = coercivity_constants(model, grid)
        trace.metadata.update(c1=constants.c1, C1=constants.C1, gamma_theory=constants.gamma)

    space = ReducedSpace.empty(model.n_trial)
    data = ResidualOfflineData.build(model, space.basis)
    logger.info("SGA on %d grid points, tol=%g, n_max=%d", len(grid), tol, n_max)
    while True:
        n = space.dimension
        if n == 0:
            reduced = [np.zeros(0)] * len(grid)
        else:
            blocks = galerkin_blocks(model, space)
            reduced = [galerkin_reduced_solve(model, space, p, blocks) for p in grid]
        surrogates = np.array([residual_norm(data, t, c) for t, c in zip(thetas, reduced)])
        best = int(np.argmax(surrogates))
        row = TraceRow(n=n, surrogate_max=float(surrogates[best]))
        trace.append(row)
        logger.info("SGA n=%d: max surrogate %.6e at y=%.6g", n, surrogates[best], grid[best].y)

        if surrogates[best] <= tol:
            trace.stop_reason = "tol"
        elif n >= n_max:
            trace.stop_reason = "budget"
        else:
            row.y_selected = grid[best].y
            row.selected = best
        if validate:
            solutions = [space.expand(c) for c in reduced]
            _validate_row(row, model, grid, space, sweep, solutions)
        if trace.stop_reason:
            break

        snapshot = sweep.solutions[:, best] if validate else truth_solve(model, grid[best])[0]
        extended = space.extend(snapshot, grid[best], model.gram_U)
        if extended is None:
            trace.stop_reason = "exhausted"
            break
        data = data.extend(model, extended.basis[:, n:])
        space = extended
    logger.info("SGA stopped (%s) at n=%d", trace.stop_reason, space.dimension)
    return space, trace
