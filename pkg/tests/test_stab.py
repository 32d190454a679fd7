"""Test reduced saddle systems, test-space certification and the double greedy."""

import math

import numpy as np
import pytest

from genro_rb.errors import StabilityBreachError
from genro_rb.rbgreedy import best_approximation_error
from genro_rb.stab import (
    SaddleReducedModel,
    delta_from_infsup,
    petrov_galerkin_solve,
    projection_deficiency,
    saddle_reduced_solve,
    sga_dou_run,
    stabilize,
    supremizer,
    worst_case_infsup,
)
from genro_rb.truth import angle_grid, apply_operator, assemble_truth, truth_solve, u_hat_norm

SWEEP_EPSILONS = (2.0**-5, 2.0**-10, 2.0**-20)


def trial_only(model, angles):
    """Pair spanned by the truth snapshots at the given angles, empty test space."""
    srm = SaddleReducedModel.initial(model)
    for y in angles:
        p = model.parameter(y)
        srm = srm.add_trial(truth_solve(model, p)[0], p)
    return srm


@pytest.fixture
def trial_pair(tiny_model):
    """Two trial snapshots at y = 0 and y = π/2, empty test space."""
    return trial_only(tiny_model, (0.0, np.pi / 2))


@pytest.fixture
def full_test_pair(trial_pair, tiny_model):
    """Trial pair whose test space is the whole truth test space."""
    return trial_pair.add_test(np.eye(tiny_model.n_test), tiny_model.parameter(0.0))


@pytest.fixture
def tiny_grid(tiny_model):
    """Eight angles at the tiny model's epsilon."""
    return angle_grid(8, tiny_model.epsilon)


class TestSaddleReducedModel:
    """Test the incremental reduced blocks."""

    def test_initial(self, tiny_model):
        """Test the empty pair."""
        srm = SaddleReducedModel.initial(tiny_model)
        assert (srm.n, srm.n_V) == (0, 0)
        assert srm.reduced_blocks.shape == (4, 0, 0)

    def test_blocks_match_explicit_products(self, trial_pair, tiny_model, rng):
        """Test V_nᵀ A_k U_n after interleaved trial and test additions."""
        p = tiny_model.parameter(0.0)
        srm = trial_pair.add_test(rng.standard_normal((tiny_model.n_test, 2)), p)
        srm = srm.add_trial(truth_solve(tiny_model, tiny_model.parameter(1.0))[0], p)
        srm = srm.add_test(rng.standard_normal(tiny_model.n_test), p)
        assert (srm.n, srm.n_V) == (3, 3)
        for k, op in enumerate(tiny_model.affine_ops):
            explicit = srm.test.basis.T @ (op @ srm.trial.basis)
            assert np.allclose(srm.reduced_blocks[k], explicit, atol=1e-12)
        assert np.allclose(srm.reduced_rhs, srm.test.basis.T @ tiny_model.rhs, atol=1e-12)

    def test_uhat_gram(self, trial_pair, tiny_model):
        """Test that the reduced renormed Gram matches truth norms."""
        p = tiny_model.parameter(0.8)
        c = np.array([0.3, -1.2])
        reduced = math.sqrt(c @ trial_pair.uhat_gram(p) @ c)
        assert reduced == pytest.approx(u_hat_norm(tiny_model, p, trial_pair.trial.expand(c)))

    def test_truncate(self, full_test_pair):
        """Test truncation of both spaces."""
        head = full_test_pair.truncate(1, 4)
        assert (head.n, head.n_V) == (1, 4)
        assert head.reduced_blocks.shape == (4, 4, 1)
        with pytest.raises(ValueError, match="cannot truncate"):
            full_test_pair.truncate(3, 4)


class TestSaddleReducedSolve:
    """Test the reduced minimum-residual solver."""

    def test_full_test_space_is_best_approximation(self, full_test_pair, tiny_model):
        """Test that V_n = V gives the renormed best approximation."""
        p = tiny_model.parameter(2.2)
        u = truth_solve(tiny_model, p)[0]
        c, _rho = saddle_reduced_solve(full_test_pair, p)
        error = u_hat_norm(tiny_model, p, u - full_test_pair.trial.expand(c))
        best = best_approximation_error(tiny_model, full_test_pair.trial, p, u)
        assert error == pytest.approx(best, rel=1e-8)

    def test_residual_orthogonality(self, full_test_pair, tiny_model):
        """Test Cᵀρ = 0."""
        p = tiny_model.parameter(4.0)
        _c, rho = saddle_reduced_solve(full_test_pair, p)
        assert np.allclose(full_test_pair.cross_matrix(p).T @ rho, 0.0, atol=1e-12)

    def test_empty_trial_space(self, tiny_model):
        """Test that n = 0 returns an empty solution."""
        srm = SaddleReducedModel.initial(tiny_model)
        c, rho = saddle_reduced_solve(srm, tiny_model.parameter(0.0))
        assert c.shape == (0,)
        assert rho.shape == (0,)

    def test_undersized_test_space(self, trial_pair, tiny_model):
        """Test that n_V < n raises a breach carrying the parameter."""
        p = tiny_model.parameter(0.0)
        srm = trial_pair.add_test(supremizer(tiny_model, p, trial_pair.trial.basis[:, 0]), p)
        with pytest.raises(StabilityBreachError, match="not certified") as info:
            saddle_reduced_solve(srm, p)
        assert info.value.parameter == p

    def test_petrov_galerkin_agrees(self, trial_pair, tiny_model, tiny_grid):
        """Test that the projected ideal test space gives the saddle solution at 5 angles."""
        srm = stabilize(trial_pair, tiny_model, tiny_grid, 0.1).srm
        for p in tiny_grid[:5]:
            c, _rho = saddle_reduced_solve(srm, p)
            assert np.allclose(petrov_galerkin_solve(srm, p), c, rtol=1e-9, atol=1e-12)


class TestInfSup:
    """Test inf-sup constants and supremizers."""

    def test_full_test_space_is_ideal(self, full_test_pair, tiny_grid):
        """Test β = 1 when V_n = V."""
        assert worst_case_infsup(full_test_pair, tiny_grid).beta == pytest.approx(1.0, abs=1e-8)

    def test_empty_trial_space(self, tiny_model, tiny_grid):
        """Test β = 1 for n = 0."""
        result = worst_case_infsup(SaddleReducedModel.initial(tiny_model), tiny_grid)
        assert result.beta == 1.0

    def test_undersized_test_space(self, trial_pair, tiny_grid):
        """Test β = 0 when n_V < n."""
        result = worst_case_infsup(trial_pair, tiny_grid)
        assert result.beta == 0.0
        assert result.w @ trial_pair.uhat_gram(tiny_grid[0]) @ result.w == pytest.approx(1.0)

    def test_minimizer_normalized(self, trial_pair, tiny_grid, rng):
        """Test that the worst trial vector has unit renormed norm."""
        p = tiny_grid[0]
        srm = trial_pair.add_test(rng.standard_normal((trial_pair.model.n_test, 3)), p)
        result = worst_case_infsup(srm, tiny_grid)
        assert 0 < result.beta < 1
        assert result.w @ srm.uhat_gram(result.parameter) @ result.w == pytest.approx(1.0)
        assert tiny_grid[result.index] == result.parameter

    def test_empty_grid(self, trial_pair):
        """Test that an empty grid is refused."""
        with pytest.raises(ValueError, match="grid is empty"):
            worst_case_infsup(trial_pair, [])

    def test_supremizer_is_riesz_lift(self, tiny_model, rng):
        """Test (s, v)_V = b(w, v) for the supremizer s of w."""
        p = tiny_model.parameter(1.3)
        w = rng.standard_normal(tiny_model.n_trial)
        s = supremizer(tiny_model, p, w)
        assert np.allclose(tiny_model.gram_V.matvec(s), apply_operator(tiny_model, p, w))

    def test_supremizer_of_zero(self, tiny_model):
        """Test that the zero trial vector is refused."""
        with pytest.raises(ValueError, match="zero trial"):
            supremizer(tiny_model, tiny_model.parameter(0.0), np.zeros(tiny_model.n_trial))

    @pytest.mark.parametrize(
        "beta,delta", [(1.0, 0.0), (0.0, 1.0), (0.6, 0.8), (1.0 + 1e-14, 0.0)]
    )
    def test_delta_from_infsup(self, beta, delta):
        """Test δ = √(1 - β²) with clipping."""
        assert delta_from_infsup(beta) == pytest.approx(delta)


class TestStabilize:
    """Test supremizer enrichment."""

    @pytest.mark.parametrize("mode", ["greedy", "full"])
    def test_certifies(self, trial_pair, tiny_model, tiny_grid, mode):
        """Test that enrichment reaches √(1 - δ²) on the grid."""
        result = stabilize(trial_pair, tiny_model, tiny_grid, 0.1, mode)
        assert result.infsup >= math.sqrt(1 - 0.01)
        assert result.enrichment == result.srm.n_V
        assert result.srm.n_V >= result.srm.n

    @pytest.mark.parametrize("delta", [0.05, 0.1, 0.2, 0.3, 0.5])
    @pytest.mark.parametrize("angles", [(0.0,), (0.0, np.pi / 2)])
    def test_deficiency_matches_infsup(self, tiny_model, tiny_grid, delta, angles):
        """Test that the projection deficiency is √(1 - β²) on certified pairs."""
        result = stabilize(trial_only(tiny_model, angles), tiny_model, tiny_grid, delta)
        worst = worst_case_infsup(result.srm, tiny_grid)
        assert projection_deficiency(result.srm, worst.parameter) == pytest.approx(
            delta_from_infsup(worst.beta), abs=1e-6
        )
        for p in tiny_grid:
            assert projection_deficiency(result.srm, p) <= delta + 1e-8

    def test_quasi_optimality(self, trial_pair, tiny_model, tiny_grid):
        """Test ‖u - u_n‖_Û ≤ (1 - δ)⁻¹ inf_w ‖u - w‖_Û on a certified non-full pair."""
        delta = 0.3
        srm = stabilize(trial_pair, tiny_model, tiny_grid, delta).srm
        assert srm.n_V < tiny_model.n_test
        for p in tiny_grid:
            u = truth_solve(tiny_model, p)[0]
            c, _rho = saddle_reduced_solve(srm, p)
            error = u_hat_norm(tiny_model, p, u - srm.trial.expand(c))
            best = best_approximation_error(tiny_model, srm.trial, p, u)
            assert error <= best / (1 - delta) * (1 + 1e-10) + 1e-14

    def test_full_mode_adds_at_most_m(self, tiny_model, tiny_grid):
        """Test that full mode adds at most M functions per new trial function and certifies."""
        first = stabilize(trial_only(tiny_model, (0.0,)), tiny_model, tiny_grid, 0.1, "full")
        assert first.enrichment <= tiny_model.n_terms
        p = tiny_model.parameter(np.pi / 2)
        grown = first.srm.add_trial(truth_solve(tiny_model, p)[0], p)
        second = stabilize(grown, tiny_model, tiny_grid, 0.1, "full")
        assert second.enrichment <= tiny_model.n_terms
        assert second.infsup >= math.sqrt(1 - 0.01)

    def test_already_certified(self, full_test_pair, tiny_model, tiny_grid):
        """Test that a certified pair is returned unchanged."""
        result = stabilize(full_test_pair, tiny_model, tiny_grid, 0.1)
        assert result.enrichment == 0
        assert result.srm is full_test_pair

    def test_empty_trial_space(self, tiny_model, tiny_grid):
        """Test that n = 0 needs no enrichment."""
        result = stabilize(SaddleReducedModel.initial(tiny_model), tiny_model, tiny_grid, 0.1)
        assert (result.enrichment, result.infsup) == (0, 1.0)

    def test_validation(self, trial_pair, tiny_model, coercive_model, tiny_grid):
        """Test argument validation."""
        with pytest.raises(ValueError, match="delta"):
            stabilize(trial_pair, tiny_model, tiny_grid, 1.0)
        with pytest.raises(ValueError, match="Mode 'lazy' not found"):
            stabilize(trial_pair, tiny_model, tiny_grid, 0.1, mode="lazy")
        with pytest.raises(ValueError, match="truth model the reduced pair was built on"):
            stabilize(trial_pair, coercive_model, tiny_grid, 0.1)


class TestSgaDouRun:
    """Test the double greedy loop."""

    @pytest.fixture(scope="class")
    def validated_run(self, convective_model):
        """Validated double greedy run on 16 angles at eps = 2^-5."""
        grid = angle_grid(16, convective_model.epsilon)
        return sga_dou_run(convective_model, grid, delta=0.1, tol=1e-12, n_max=5, validate=True)

    def test_rows(self, validated_run):
        """Test rows n = 1..5, certified δ and the budget stop."""
        srm, trace = validated_run
        assert trace.column("n") == [1, 2, 3, 4, 5]
        assert trace.stop_reason == "budget"
        assert srm.n == 5
        assert all(n_V >= n for n, n_V in zip(trace.column("n"), trace.column("n_V")))
        assert np.all(trace.values("delta_certified") <= 0.1 + 1e-12)

    def test_columns(self, validated_run):
        """Test the exported columns of a validated run."""
        _srm, trace = validated_run
        assert trace.columns == (
            "n",
            "n_V",
            "delta_certified",
            "surrogate_max",
            "true_error_max",
            "ratio",
            "gamma_hat",
        )

    def test_surrogate_tightness(self, validated_run):
        """Test |surrogate/true error - 1| ≤ 1e-6 above the noise level."""
        srm, trace = validated_run
        floor = 1e-4 * math.sqrt(srm.residual_data.ff)
        checked = [row for row in trace.rows if row.true_error_max > floor]
        assert checked
        for row in checked:
            assert abs(row.ratio - 1) <= 1e-6

    def test_selection_weakness(self, validated_run):
        """Test γ̂ ≥ 1 - δ - 1e-3 at every selection."""
        _srm, trace = validated_run
        selected = [row for row in trace.rows if row.selected is not None]
        assert len(selected) == 4
        for row in selected:
            assert row.gamma_hat >= 1 - 0.1 - 1e-3

    def test_monotone_decay(self, validated_run):
        """Test that the largest surrogate never increases."""
        _srm, trace = validated_run
        surrogates = trace.values("surrogate_max")
        assert np.all(surrogates[1:] <= surrogates[:-1] * (1 + 1e-6))

    def test_greedy_enrichment_per_step(self, convective_model):
        """Test at most M supremizers per outer step at δ = 0.1 on 32 angles up to n = 4."""
        grid = angle_grid(32, convective_model.epsilon)
        _srm, trace = sga_dou_run(convective_model, grid, delta=0.1, tol=0.0, n_max=4)
        assert trace.column("n") == [1, 2, 3, 4]
        for row in trace.rows:
            assert row.enrichment <= convective_model.n_terms
            assert row.infsup >= math.sqrt(1 - 0.01)

    def test_full_mode(self, convective_model, coarse_grid):
        """Test that full enrichment certifies every row with at most M additions per step."""
        _srm, trace = sga_dou_run(convective_model, coarse_grid, delta=0.1, n_max=3, mode="full")
        assert np.all(trace.values("delta_certified") <= 0.1 + 1e-12)
        assert len(trace) == 3
        assert all(row.enrichment <= convective_model.n_terms for row in trace.rows)

    def test_tol_stop(self, frozen_model):
        """Test that an angle-independent solution stops after one trial function."""
        srm, trace = sga_dou_run(frozen_model, angle_grid(4, 1.0), tol=1e-6, n_max=5)
        assert srm.n == 1
        assert trace.stop_reason == "tol"

    def test_saturation_stop(self, tiny_model, tiny_grid):
        """Test the stop once the surrogate falls below the truth accuracy."""
        _srm, trace = sga_dou_run(tiny_model, tiny_grid, tol=1e-12, n_max=5, truth_accuracy=1e3)
        assert trace.stop_reason == "saturated"
        assert len(trace) == 1
        assert trace.columns[-1] == "surr_over_apost"
        assert trace.rows[0].surr_over_apost == pytest.approx(trace.rows[0].surrogate_max / 1e3)

    def test_validation(self, tiny_model, tiny_grid):
        """Test argument validation."""
        with pytest.raises(ValueError, match="grid is empty"):
            sga_dou_run(tiny_model, [])
        with pytest.raises(ValueError, match="n_max"):
            sga_dou_run(tiny_model, tiny_grid, n_max=0)
        with pytest.raises(ValueError, match="truth_accuracy"):
            sga_dou_run(tiny_model, tiny_grid, n_max=2, truth_accuracy=0.0)


@pytest.mark.slow
class TestDoubleGreedyAcrossScales:
    """Test the double greedy at h = 1/32 on 64 angles for shrinking epsilon."""

    @pytest.fixture(scope="class")
    def traces(self):
        """Greedy-mode runs with δ = 0.1 up to n = 20, keyed by epsilon."""
        runs = {}
        for epsilon in SWEEP_EPSILONS:
            model = assemble_truth(1 / 32, epsilon)
            _srm, runs[epsilon] = sga_dou_run(
                model, angle_grid(64, epsilon), delta=0.1, tol=0.0, n_max=20
            )
        return runs

    def test_every_row_certified(self, traces):
        """Test β ≥ √0.99 after every outer iteration."""
        for trace in traces.values():
            assert len(trace) == 20
            for row in trace.rows:
                assert row.infsup >= math.sqrt(1 - 0.01) - 1e-12

    def test_test_space_ratio(self, traces):
        """Test n_V ≤ 4n and the M·n + 8 enrichment cap throughout."""
        for trace in traces.values():
            for row in trace.rows:
                assert row.n_V <= 4 * row.n
                assert row.enrichment <= 4 * row.n + 8

    def test_monotone_decay(self, traces):
        """Test that the largest surrogate never increases."""
        for trace in traces.values():
            surrogates = trace.values("surrogate_max")
            assert np.all(surrogates[1:] <= surrogates[:-1] * (1 + 1e-6))

    def test_delta_independent_of_epsilon(self, traces):
        """Test that the same δ = 0.1 is certified at every epsilon."""
        for trace in traces.values():
            assert np.all(trace.values("delta_certified") <= 0.1 + 1e-12)

    def test_accuracy_gain(self, traces):
        """Test the surrogate drop at eps = 2^-5: ≥ 30x by n = 10 and ≥ 100x by n = 20."""
        surrogates = traces[2.0**-5].values("surrogate_max")
        assert surrogates[0] / surrogates[9] >= 30
        assert surrogates[0] / surrogates.min() >= 100
