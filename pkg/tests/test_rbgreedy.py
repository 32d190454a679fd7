"""Test reduced spaces, the offline-online residual surrogate and the SGA loop."""

from dataclasses import replace

import numpy as np
import pytest

from genro_rb.errors import CoercivityLossError
from genro_rb.kernel import dual_norm, gram_orthonormalize
from genro_rb.rbgreedy import (
    GalerkinBlocks,
    ReducedSpace,
    ResidualOfflineData,
    best_approximation_error,
    coercivity_constants,
    galerkin_reduced_solve,
    projection_errors,
    residual_norm,
    sga_run,
    snapshot_width_lower,
    surrogate_eval,
)
from genro_rb.truth import angle_grid, apply_operator, truth_solve, u_hat_norm


@pytest.fixture
def tiny_basis(tiny_model, rng):
    """Three random columns, orthonormal in the trial Gram of the tiny model."""
    return gram_orthonormalize(rng.standard_normal((tiny_model.n_trial, 3)), tiny_model.gram_U)


@pytest.fixture
def snapshot_space(tiny_model):
    """Space spanned by the truth solutions at y = 0 and y = π/2."""
    space = ReducedSpace.empty(tiny_model.n_trial)
    for y in (0.0, np.pi / 2):
        p = tiny_model.parameter(y)
        space = space.extend(truth_solve(tiny_model, p)[0], p, tiny_model.gram_U)
    return space


class TestReducedSpace:
    """Test basis growth."""

    def test_extend_orthonormal(self, snapshot_space, tiny_model):
        """Test that the extended basis is Gram-orthonormal."""
        basis = snapshot_space.basis
        assert snapshot_space.dimension == 2
        assert np.allclose(basis.T @ tiny_model.gram_U.matvec(basis), np.eye(2), atol=1e-10)
        assert [p.y for p in snapshot_space.parameters] == [0.0, np.pi / 2]

    def test_dependent_vector_is_dropped(self, snapshot_space, tiny_model):
        """Test that a vector inside the span leaves the space unchanged."""
        inside = snapshot_space.basis @ np.array([2.0, -1.0])
        assert snapshot_space.extend(inside, tiny_model.parameter(1.0), tiny_model.gram_U) is None

    def test_expand_length(self, snapshot_space):
        """Test that a wrong-length coefficient vector is refused."""
        with pytest.raises(ValueError, match="dimension 2"):
            snapshot_space.expand(np.ones(3))


class TestResidualOfflineData:
    """Test the offline-online decomposition of the residual dual norm."""

    def test_matches_truth_residual(self, tiny_model, tiny_basis, rng):
        """Test that the surrogate equals the truth dual norm of the residual."""
        data = ResidualOfflineData.build(tiny_model, tiny_basis)
        for y in (0.3, 2.0, 4.5):
            p = tiny_model.parameter(y)
            c = rng.standard_normal(3)
            residual = tiny_model.rhs - apply_operator(tiny_model, p, tiny_basis @ c)
            expected = dual_norm(tiny_model.gram_V, residual)
            assert surrogate_eval(data, tiny_model.theta(p), c) == pytest.approx(
                expected, rel=1e-8
            )

    def test_matches_truth_residual_random_coefficients(self, tiny_model, tiny_basis, rng):
        """Test 10 random (θ, c) against the truth dual norm of f - Σθ_k A_k Φc."""
        data = ResidualOfflineData.build(tiny_model, tiny_basis)
        for _ in range(10):
            theta = rng.standard_normal(tiny_model.n_terms)
            c = rng.standard_normal(3)
            image = sum(t * (op @ (tiny_basis @ c)) for t, op in zip(theta, tiny_model.affine_ops))
            expected = dual_norm(tiny_model.gram_V, tiny_model.rhs - image)
            assert surrogate_eval(data, theta, c) == pytest.approx(expected, rel=1e-6)

    def test_zero_coefficients(self, tiny_model, tiny_basis):
        """Test that c = 0 gives ‖f‖_V'."""
        data = ResidualOfflineData.build(tiny_model, tiny_basis)
        value = surrogate_eval(data, tiny_model.theta(tiny_model.parameter(1.0)), np.zeros(3))
        assert value == pytest.approx(dual_norm(tiny_model.gram_V, tiny_model.rhs))

    def test_incremental_extend(self, tiny_model, tiny_basis):
        """Test that appending a column reproduces the full build."""
        full = ResidualOfflineData.build(tiny_model, tiny_basis)
        grown = ResidualOfflineData.build(tiny_model, tiny_basis[:, :2]).extend(
            tiny_model, tiny_basis[:, 2]
        )
        assert np.allclose(grown.AA, full.AA, atol=1e-12)
        assert np.allclose(grown.fA, full.fA, atol=1e-12)

    def test_truncate(self, tiny_model, tiny_basis):
        """Test that truncation keeps the data of the leading columns."""
        full = ResidualOfflineData.build(tiny_model, tiny_basis)
        head = ResidualOfflineData.build(tiny_model, tiny_basis[:, :2])
        assert np.allclose(full.truncate(2).AA, head.AA, atol=1e-12)
        with pytest.raises(ValueError, match="truncate"):
            full.truncate(4)

    def test_symmetric_blocks(self, tiny_model, tiny_basis):
        """Test that the quadratic block is symmetric."""
        data = ResidualOfflineData.build(tiny_model, tiny_basis)
        assert data.AA.shape == (12, 12)
        assert np.allclose(data.AA, data.AA.T, atol=1e-12)

    def test_shape_errors(self, tiny_model, tiny_basis):
        """Test that mismatched θ or c are refused."""
        data = ResidualOfflineData.build(tiny_model, tiny_basis)
        with pytest.raises(ValueError, match="theta has shape"):
            surrogate_eval(data, np.ones(3), np.zeros(3))
        with pytest.raises(ValueError, match="coefficients have shape"):
            surrogate_eval(data, np.ones(4), np.zeros(2))


class TestGalerkinReducedSolve:
    """Test the coercive reduced solver."""

    def test_reproduces_snapshot(self, snapshot_space, tiny_model):
        """Test that a parameter whose solution is in the space is solved exactly."""
        p = tiny_model.parameter(np.pi / 2)
        u = truth_solve(tiny_model, p)[0]
        c = galerkin_reduced_solve(tiny_model, snapshot_space, p)
        assert u_hat_norm(tiny_model, p, u - snapshot_space.expand(c)) <= 1e-10 * (
            u_hat_norm(tiny_model, p, u)
        )

    def test_residual_floor(self, snapshot_space, tiny_model):
        """Test that the cancellation fallback returns a tiny residual."""
        p = tiny_model.parameter(0.0)
        data = ResidualOfflineData.build(tiny_model, snapshot_space.basis)
        c = galerkin_reduced_solve(tiny_model, snapshot_space, p)
        assert residual_norm(data, tiny_model.theta(p), c) <= 1e-7 * np.sqrt(data.ff)

    def test_surrogate_is_renormed_error(self, snapshot_space, tiny_model):
        """Test that with square pairing the surrogate equals ‖u - u_n‖_Û."""
        data = ResidualOfflineData.build(tiny_model, snapshot_space.basis)
        p = tiny_model.parameter(1.1)
        u = truth_solve(tiny_model, p)[0]
        c = galerkin_reduced_solve(tiny_model, snapshot_space, p)
        error = u_hat_norm(tiny_model, p, u - snapshot_space.expand(c))
        assert residual_norm(data, tiny_model.theta(p), c) == pytest.approx(error, rel=1e-6)

    def test_empty_space(self, tiny_model):
        """Test that an empty space is refused."""
        with pytest.raises(ValueError, match="nonempty"):
            galerkin_reduced_solve(
                tiny_model, ReducedSpace.empty(tiny_model.n_trial), tiny_model.parameter(0.0)
            )

    def test_singular_matrix(self, snapshot_space, tiny_model):
        """Test that a vanishing reduced matrix raises CoercivityLossError."""
        degenerate = replace(tiny_model, theta=lambda p: np.zeros(4))
        with pytest.raises(CoercivityLossError, match="singular"):
            galerkin_reduced_solve(degenerate, snapshot_space, tiny_model.parameter(0.0))

    def test_rank_deficient_matrix(self, snapshot_space, tiny_model):
        """Test that a nonzero rank-one reduced matrix raises instead of returning inf."""
        blocks = GalerkinBlocks(np.stack([np.ones((2, 2))] * 4), np.array([1.0, 2.0]))
        with pytest.raises(CoercivityLossError, match="singular"):
            galerkin_reduced_solve(tiny_model, snapshot_space, tiny_model.parameter(0.3), blocks)


class TestApproximationQuantities:
    """Test coercivity constants, best approximations and width bounds."""

    def test_coercivity_constants(self, tiny_model):
        """Test that the Galerkin form is coercive with c₁ ≤ C₁."""
        constants = coercivity_constants(tiny_model, angle_grid(4, tiny_model.epsilon))
        assert 0 < constants.c1 <= constants.C1
        assert 0 < constants.gamma <= 1

    def test_best_approximation_beats_galerkin(self, snapshot_space, tiny_model):
        """Test that the best renormed approximation is no worse than Galerkin."""
        p = tiny_model.parameter(2.5)
        u = truth_solve(tiny_model, p)[0]
        c = galerkin_reduced_solve(tiny_model, snapshot_space, p)
        galerkin_error = u_hat_norm(tiny_model, p, u - snapshot_space.expand(c))
        best = best_approximation_error(tiny_model, snapshot_space, p, u)
        assert best <= galerkin_error * (1 + 1e-10)

    def test_best_approximation_empty_space(self, tiny_model):
        """Test that the empty space gives the full norm."""
        p = tiny_model.parameter(0.7)
        u = truth_solve(tiny_model, p)[0]
        empty = ReducedSpace.empty(tiny_model.n_trial)
        assert best_approximation_error(tiny_model, empty, p, u) == pytest.approx(
            u_hat_norm(tiny_model, p, u)
        )

    def test_snapshot_width_lower(self, tiny_model, rng):
        """Test the POD tails: K + 1 values, nonincreasing, ending at zero."""
        snapshots = rng.standard_normal((tiny_model.n_trial, 4))
        tails = snapshot_width_lower(snapshots, tiny_model.gram_U)
        assert tails.shape == (5,)
        assert np.all(np.diff(tails) <= 1e-14)
        assert tails[-1] == 0.0
        squared_norms = np.einsum("ak,ak->k", snapshots, tiny_model.gram_U.matvec(snapshots))
        assert tails[0] == pytest.approx(np.sqrt(squared_norms.mean()))

    def test_width_lower_below_projection(self, snapshot_space, tiny_model):
        """Test that the RMS tail never exceeds the largest projection error."""
        grid = angle_grid(6, tiny_model.epsilon)
        snapshots = np.column_stack([truth_solve(tiny_model, p)[0] for p in grid])
        tails = snapshot_width_lower(snapshots, tiny_model.gram_U)
        distances = projection_errors(snapshot_space, tiny_model.gram_U, snapshots)
        assert tails[2] <= distances.max() * (1 + 1e-10)


class TestSgaRun:
    """Test the surrogate greedy loop."""

    def test_budget_stop(self, tiny_model):
        """Test rows n = 0..n_max and the budget stop."""
        space, trace = sga_run(tiny_model, angle_grid(8, tiny_model.epsilon), 1e-12, 3)
        assert space.dimension == 3
        assert trace.column("n") == [0, 1, 2, 3]
        assert trace.stop_reason == "budget"
        assert trace.rows[-1].y_selected is None

    def test_tol_stop_on_angle_independent_model(self, frozen_model):
        """Test that one snapshot suffices when the solution ignores the angle."""
        space, trace = sga_run(frozen_model, angle_grid(6, frozen_model.epsilon), 1e-8, 5)
        assert space.dimension == 1
        assert trace.stop_reason in ("tol", "exhausted")

    def test_grid_exhaustion(self, tiny_model):
        """Test that spanning every grid snapshot drives the surrogate to zero."""
        grid = angle_grid(3, tiny_model.epsilon)
        space, trace = sga_run(tiny_model, grid, 1e-8, tiny_model.n_trial)
        assert space.dimension <= 3
        assert trace.stop_reason in ("tol", "exhausted")

    def test_validation_columns(self, tiny_model):
        """Test that validation records errors, σ_n, width bounds and γ̂."""
        grid = angle_grid(8, tiny_model.epsilon)
        _space, trace = sga_run(tiny_model, grid, 1e-12, 3, validate=True)
        assert trace.columns[-4:] == ("true_error_max", "gamma_hat", "sigma", "width_lower")
        assert trace.values("true_error_max") == pytest.approx(
            trace.values("surrogate_max"), rel=1e-6
        )
        for row in trace.rows:
            assert row.width_lower <= row.sigma * (1 + 1e-10) + 1e-14
        assert all(0 < row.gamma_hat <= 1 + 1e-12 for row in trace.rows[:-1])
        assert 0 < trace.metadata["gamma_theory"] <= 1

    def test_coercive_run_on_64_angles(self, coercive_model):
        """Test monotone σ_n above the width lower bound and γ̂ ≥ 0.1 at eps = 1."""
        grid = angle_grid(64, coercive_model.epsilon)
        _space, trace = sga_run(coercive_model, grid, 1e-6, 12, validate=True)
        sigmas = trace.values("sigma")
        assert np.all(np.diff(sigmas) <= 1e-12 * sigmas[0])
        for row in trace.rows:
            assert row.width_lower <= row.sigma * (1 + 1e-10) + 1e-14
        selected = [row for row in trace.rows if row.selected is not None]
        assert selected
        assert all(row.gamma_hat >= 0.1 for row in selected)

    def test_first_row_is_load_norm(self, tiny_model):
        """Test that the empty space gives ‖f‖_V' everywhere and selects the first angle."""
        _space, trace = sga_run(tiny_model, angle_grid(8, tiny_model.epsilon), 1e-12, 1)
        assert trace.rows[0].surrogate_max == pytest.approx(
            dual_norm(tiny_model.gram_V, tiny_model.rhs)
        )
        assert trace.rows[0].selected == 0
        assert trace.rows[0].y_selected == 0.0

    def test_validation(self, tiny_model):
        """Test argument validation."""
        with pytest.raises(ValueError, match="grid is empty"):
            sga_run(tiny_model, [], 1e-6, 2)
        with pytest.raises(ValueError, match="n_max"):
            sga_run(tiny_model, angle_grid(2, tiny_model.epsilon), 1e-6, 10)
