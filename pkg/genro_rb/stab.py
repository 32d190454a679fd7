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
Double greedy construction with certified test spaces.

Reduced solutions solve the saddle system of the minimum-residual method on
a trial space U_n and a test space V_n. The test space is enriched with
supremizers until the inf-sup constant of the pair, measured in the renormed
trial norm, reaches √(1-δ²) on the whole grid; the reduced residual norm is
then a surrogate that is tight up to the factor (1-δ)⁻¹.
"""

import logging
import math
import warnings
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy.linalg import LinAlgError, LinAlgWarning, eigh, null_space, solve

from .errors import EnrichmentCapError, FactorizationError, StabilityBreachError
from .kernel import SpdGram, min_generalized_singular_pair, spd_solve
from .rbgreedy import (
    ReducedSpace,
    ResidualOfflineData,
    projection_errors,
    residual_norm,
    truth_sweep,
)
from .trace import GreedyTrace, TraceRow
from .truth import ParameterPoint, TruthModel, apply_operator, truth_solve, u_hat_norm

logger = logging.getLogger(__name__)

SGA_DOU_COLUMNS = ("n", "n_V", "delta_certified", "surrogate_max")
SGA_DOU_VALIDATION_COLUMNS = ("true_error_max", "ratio", "gamma_hat")
ENRICHMENT_MODES = ("greedy", "full")
ENRICHMENT_SLACK = 8

_SEED_FLOOR = math.sqrt(np.finfo(float).eps)


@dataclass(frozen=True)
class SaddleReducedModel:
    """
    Trial and test reduced spaces with the data of their saddle system.

    Attributes:
        model: Truth model the spaces live in
        trial: gram_U-orthonormal trial basis U_n
        test: gram_V-orthonormal test basis V_n
        residual_data: Dual-norm data of the trial basis, also the blocks of
            the renormed trial Gram
        reduced_blocks: (M, n_V, n) matrices V_nᵀ A_k U_n
        reduced_rhs: V_nᵀ f
    """

    model: TruthModel
    trial: ReducedSpace
    test: ReducedSpace
    residual_data: ResidualOfflineData
    reduced_blocks: np.ndarray
    reduced_rhs: np.ndarray

    @classmethod
    def initial(cls, model: TruthModel) -> "SaddleReducedModel":
        trial = ReducedSpace.empty(model.n_trial)
        return cls(
            model=model,
            trial=trial,
            test=ReducedSpace.empty(model.n_test),
            residual_data=ResidualOfflineData.build(model, trial.basis),
            reduced_blocks=np.zeros((model.n_terms, 0, 0)),
            reduced_rhs=np.zeros(0),
        )

    @property
    def n(self) -> int:
        return self.trial.dimension

    @property
    def n_V(self) -> int:
        return self.test.dimension

    def add_trial(self, snapshot, parameter) -> "SaddleReducedModel | None":
        """Append an orthonormalized snapshot; None when it lies in the trial space."""
        trial = self.trial.extend(snapshot, parameter, self.model.gram_U)
        if trial is None:
            return None
        data = self.residual_data.extend(self.model, trial.basis[:, self.n :])
        new_images = data.images[:, :, self.n :]
        column = np.einsum("av,kaj->kvj", self.test.basis, new_images)
        return replace(
            self,
            trial=trial,
            residual_data=data,
            reduced_blocks=np.concatenate([self.reduced_blocks, column], axis=2),
        )

    def add_test(self, vectors, parameter) -> "SaddleReducedModel | None":
        """Append orthonormalized test vectors; None when all of them are dependent."""
        test = self.test.extend(vectors, parameter, self.model.gram_V)
        if test is None:
            return None
        fresh = test.basis[:, self.n_V :]
        rows = np.einsum("av,kaj->kvj", fresh, self.residual_data.images)
        return replace(
            self,
            test=test,
            reduced_blocks=np.concatenate([self.reduced_blocks, rows], axis=1),
            reduced_rhs=np.concatenate([self.reduced_rhs, fresh.T @ self.model.rhs]),
        )

    def truncate(self, n: int, n_V: int) -> "SaddleReducedModel":
        """Pair of the leading n trial and n_V test columns."""
        if not (0 <= n <= self.n and 0 <= n_V <= self.n_V):
            raise ValueError(
                f"cannot truncate a ({self.n}, {self.n_V}) pair to ({n}, {n_V})"
            )
        return replace(
            self,
            trial=ReducedSpace(self.trial.basis[:, :n], self.trial.parameters[:n]),
            test=ReducedSpace(self.test.basis[:, :n_V], self.test.parameters[:n_V]),
            residual_data=self.residual_data.truncate(n),
            reduced_blocks=self.reduced_blocks[:, :n_V, :n],
            reduced_rhs=self.reduced_rhs[:n_V],
        )

    def cross_matrix(self, p: ParameterPoint) -> np.ndarray:
        """C(y) = Σ θ_k V_nᵀ A_k U_n."""
        return np.einsum("k,kvj->vj", self.model.theta(p), self.reduced_blocks)

    def uhat_gram(self, p: ParameterPoint) -> np.ndarray:
        """Renormed trial Gram (B_y φ_i, B_y φ_j)_V' of the trial basis."""
        theta = self.model.theta(p)
        gram = np.einsum("k,l,kilj->ij", theta, theta, self.residual_data.blocks)
        return 0.5 * (gram + gram.T)


def saddle_reduced_solve(srm: SaddleReducedModel, p: ParameterPoint):
    """
    Solve [I, C(y); C(y)ᵀ, 0] (ρ; c) = (V_nᵀ f; 0).

    Returns:
        (c, rho): trial-reduced solution and test-reduced residual lift

    Raises:
        StabilityBreachError: If the saddle system is singular at p
    """
    n, n_V = srm.n, srm.n_V
    if n == 0:
        return np.zeros(0), srm.reduced_rhs.copy()
    cross = srm.cross_matrix(p)
    system = np.block([[np.eye(n_V), cross], [cross.T, np.zeros((n, n))]])
    load = np.concatenate([srm.reduced_rhs, np.zeros(n)])
    try:
        if n_V < n:
            raise LinAlgError(f"test dimension {n_V} is below trial dimension {n}")
        with warnings.catch_warnings():
            warnings.simplefilter("error", LinAlgWarning)
            solution = solve(system, load, assume_a="sym")
    except (LinAlgError, LinAlgWarning) as exc:
        raise StabilityBreachError(
            f"reduced saddle system ({n}, {n_V}) is singular at y={p.y:.6g}, "
            f"eps={p.epsilon:g}: the test space is not certified there",
            parameter=p,
        ) from exc
    return solution[n_V:], solution[:n_V]


@dataclass(frozen=True)
class InfSupResult:
    """Smallest inf-sup constant over a grid with its parameter and trial vector."""

    beta: float
    parameter: ParameterPoint | None
    index: int | None
    w: np.ndarray


def worst_case_infsup(srm: SaddleReducedModel, grid: list[ParameterPoint]) -> InfSupResult:
    """
    Minimize the inf-sup constant of the pair over the grid.

    At each y the constant is the smallest singular value of C(y) measured
    from the renormed trial Gram G_Û(y) to the identity test Gram. The
    minimizing trial vector has unit renormed norm.

    Raises:
        FactorizationError: If the trial basis is dependent in the renormed metric
    """
    if not grid:
        raise ValueError("inf-sup grid is empty")
    n, n_V = srm.n, srm.n_V
    if n == 0:
        return InfSupResult(1.0, grid[0], 0, np.zeros(0))
    if n_V < n:
        cross = srm.cross_matrix(grid[0])
        w = null_space(cross)[:, 0] if n_V else np.eye(n)[:, 0]
        w = w / math.sqrt(w @ srm.uhat_gram(grid[0]) @ w)
        return InfSupResult(0.0, grid[0], 0, w)

    identity = SpdGram.identity(n_V)
    best = None
    for index, p in enumerate(grid):
        try:
            gram = SpdGram(srm.uhat_gram(p))
        except FactorizationError as exc:
            raise FactorizationError(
                f"renormed trial Gram is not positive definite at y={p.y:.6g}: {exc}",
                pivot=exc.pivot,
            ) from exc
        beta, w = min_generalized_singular_pair(srm.cross_matrix(p), identity, gram)
        if best is None or beta < best.beta:
            best = InfSupResult(beta, p, index, w)
    return best


def supremizer(model: TruthModel, p: ParameterPoint, w) -> np.ndarray:
    """
    Riesz lift R_V B_p w, the test function realizing sup_v b_p(w, v)/‖v‖_V.

    Raises:
        ValueError: If w is zero
    """
    w = np.asarray(w, dtype=float)
    if not np.any(w):
        raise ValueError("supremizer of the zero trial function is undefined")
    return spd_solve(model.gram_V, apply_operator(model, p, w))


def delta_from_infsup(beta: float) -> float:
    """Proximality δ = √(1-β²) certified by an inf-sup constant β."""
    beta = min(max(float(beta), 0.0), 1.0)
    return math.sqrt(1.0 - beta * beta)


class Stabilization(NamedTuple):
    srm: SaddleReducedModel
    enrichment: int
    infsup: float


def stabilize(
    srm: SaddleReducedModel,
    model: TruthModel,
    grid: list[ParameterPoint],
    delta: float,
    mode: str = "greedy",
) -> Stabilization:
    """
    Enrich the test space until the pair is δ-proximal on the grid.

    Greedy mode adds the supremizer of the worst trial vector at the worst
    parameter, one at a time. Full mode first adds the M lifts
    G_V⁻¹ A_k φ of the newest trial function and continues greedily only if
    that does not certify.

    Returns:
        (srm, number of test functions added, certified inf-sup constant)

    Raises:
        ValueError: On delta outside (0, 1), an unknown mode or a model other
            than the one the pair was built on
        EnrichmentCapError: If more than M·n + 8 functions are needed or a
            supremizer is already in the test space
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if mode not in ENRICHMENT_MODES:
        raise ValueError(f"Mode '{mode}' not found. Available: {list(ENRICHMENT_MODES)}")
    if model is not srm.model:
        raise ValueError("stabilize needs the truth model the reduced pair was built on")
    if srm.n == 0:
        return Stabilization(srm, 0, 1.0)

    target = math.sqrt(1.0 - delta * delta)
    cap = srm.model.n_terms * srm.n + ENRICHMENT_SLACK
    added = 0
    if mode == "full":
        lifts = srm.residual_data.lifts[:, :, srm.n - 1].T
        enriched = srm.add_test(lifts, srm.trial.parameters[-1])
        if enriched is not None:
            added = enriched.n_V - srm.n_V
            srm = enriched

    while True:
        worst = worst_case_infsup(srm, grid)
        logger.debug(
            "n=%d n_V=%d: inf-sup %.6f at y=%.6g", srm.n, srm.n_V, worst.beta, worst.parameter.y
        )
        if worst.beta >= target:
            return Stabilization(srm, added, worst.beta)
        if added >= cap:
            raise EnrichmentCapError(
                f"test space needs more than {cap} enrichments for n={srm.n}: "
                f"inf-sup {worst.beta:.3e} < {target:.6f}; check the truth pairing"
            )
        vector = supremizer(model, worst.parameter, srm.trial.expand(worst.w))
        enriched = srm.add_test(vector, worst.parameter)
        if enriched is None:
            raise EnrichmentCapError(
                f"supremizer at y={worst.parameter.y:.6g} is already in the test space, "
                f"inf-sup stalled at {worst.beta:.3e}"
            )
        srm = enriched
        added += 1


def _lifted_trial(srm: SaddleReducedModel, p: ParameterPoint) -> np.ndarray:
    """Columns R_V B_p φ_j."""
    return np.einsum("k,kaj->aj", srm.model.theta(p), srm.residual_data.lifts)


def projection_deficiency(srm: SaddleReducedModel, p: ParameterPoint) -> float:
    """
    max_w ‖(I - P_V) R_V B_p w‖_V / ‖R_V B_p w‖_V over the trial space.

    Evaluated with explicit truth-space projections, independently of the
    reduced blocks.
    """
    if srm.n == 0:
        return 0.0
    gram = srm.model.gram_V
    lifted = _lifted_trial(srm, p)
    basis = srm.test.basis
    deficient = lifted - basis @ (basis.T @ gram.matvec(lifted))
    numerator = deficient.T @ gram.matvec(deficient)
    denominator = lifted.T @ gram.matvec(lifted)
    largest = eigh(
        0.5 * (numerator + numerator.T), 0.5 * (denominator + denominator.T), eigvals_only=True
    )[-1]
    return math.sqrt(min(max(float(largest), 0.0), 1.0))


def petrov_galerkin_solve(srm: SaddleReducedModel, p: ParameterPoint) -> np.ndarray:
    """
    Square Petrov-Galerkin solution with the projected ideal test space.

    The test functions P_V R_V B_p φ_j are built explicitly in the truth
    space; the result coincides with the saddle solution.
    """
    if srm.n == 0:
        return np.zeros(0)
    model = srm.model
    lifted = _lifted_trial(srm, p)
    basis = srm.test.basis
    tests = basis @ (basis.T @ model.gram_V.matvec(lifted))
    images = np.einsum("k,kaj->aj", model.theta(p), srm.residual_data.images)
    try:
        return solve(tests.T @ images, tests.T @ model.rhs)
    except LinAlgError as exc:
        raise StabilityBreachError(
            f"projected test space is degenerate at y={p.y:.6g}", parameter=p
        ) from exc


def sga_dou_run(
    model: TruthModel,
    grid: list[ParameterPoint],
    delta: float = 0.1,
    tol: float = 1e-6,
    n_max: int = 50,
    mode: str = "greedy",
    validate: bool = False,
    truth_accuracy: float | None = None,
) -> tuple[SaddleReducedModel, GreedyTrace]:
    """
    Double greedy algorithm: surrogate greedy on the trial side, certified
    supremizer enrichment on the test side.

    The first trial function is the snapshot at grid[0], its test space the
    M lifts of its affine images, enriched until certified. Every later step
    seeds the test space with the lifted reduced residual at the selected
    parameter before certification.

    Row n holds the certified pair (n, n_V), its δ = √(1-β²), the largest
    surrogate ‖f - B_y u_n(y)‖_V' over the grid and the parameter selected
    next. Stop reasons: 'tol', 'saturated' (surrogate below truth_accuracy),
    'budget', 'exhausted'.

    Args:
        model: Truth model
        grid: Training and certification parameters
        delta: Proximality target in (0, 1)
        tol: Surrogate tolerance
        n_max: Largest trial dimension
        mode: Enrichment mode after the first step
        validate: Record true renormed errors over the grid, the ratio
            surrogate / true error and the weakness γ̂ of each selection
        truth_accuracy: A-posteriori accuracy of the truth model; enables
            the saturation stop and the surr_over_apost column

    Returns:
        (srm, trace)
    """
    if not grid:
        raise ValueError("training grid is empty")
    if not 1 <= n_max <= model.n_trial:
        raise ValueError(f"n_max must lie in [1, {model.n_trial}], got {n_max}")
    columns = SGA_DOU_COLUMNS
    if validate:
        columns += SGA_DOU_VALIDATION_COLUMNS
    if truth_accuracy is not None:
        if truth_accuracy <= 0:
            raise ValueError(f"truth_accuracy must be positive, got {truth_accuracy}")
        columns += ("surr_over_apost",)
    trace = GreedyTrace(
        columns,
        metadata={"delta": delta, "tol": tol, "n_max": n_max, "mode": mode, "grid_size": len(grid)},
    )
    thetas = [model.theta(p) for p in grid]
    sweep = truth_sweep(model, grid) if validate else None
    logger.info(
        "SGA-dou on %d grid points, delta=%g, tol=%g, n_max=%d", len(grid), delta, tol, n_max
    )

    snapshot, lifted = truth_solve(model, grid[0])
    srm = SaddleReducedModel.initial(model).add_trial(snapshot, grid[0])
    if srm is None:
        raise ValueError(f"truth solution at y={grid[0].y:.6g} is zero")
    if math.sqrt(max(lifted @ model.gram_V.matvec(lifted), 0.0)) > _SEED_FLOOR * math.sqrt(
        srm.residual_data.ff
    ):
        srm = srm.add_test(lifted, grid[0]) or srm
    srm, added, beta = stabilize(srm, model, grid, delta, mode="full")

    while True:
        reduced = [saddle_reduced_solve(srm, p)[0] for p in grid]
        surrogates = np.array(
            [residual_norm(srm.residual_data, t, c) for t, c in zip(thetas, reduced)]
        )
        best = int(np.argmax(surrogates))
        row = TraceRow(
            n=srm.n,
            n_V=srm.n_V,
            delta_certified=delta_from_infsup(beta),
            surrogate_max=float(surrogates[best]),
            infsup=beta,
            enrichment=added,
        )
        trace.append(row)
        logger.info(
            "SGA-dou n=%d n_V=%d: delta %.3e, max surrogate %.6e",
            srm.n,
            srm.n_V,
            row.delta_certified,
            row.surrogate_max,
        )
        if truth_accuracy is not None:
            row.surr_over_apost = row.surrogate_max / truth_accuracy

        if row.surrogate_max <= tol:
            trace.stop_reason = "tol"
        elif truth_accuracy is not None and row.surrogate_max <= truth_accuracy:
            trace.stop_reason = "saturated"
        elif srm.n >= n_max:
            trace.stop_reason = "budget"
        else:
            row.selected = best
            row.y_selected = grid[best].y
        if validate:
            errors = np.array(
                [
                    u_hat_norm(model, p, sweep.solutions[:, i] - srm.trial.expand(c))
                    for i, (p, c) in enumerate(zip(grid, reduced))
                ]
            )
            row.true_error_max = float(errors.max())
            if row.true_error_max > 0:
                row.ratio = row.surrogate_max / row.true_error_max
                if row.selected is not None:
                    row.gamma_hat = float(errors[best] / row.true_error_max)
            row.sigma = float(projection_errors(srm.trial, model.gram_U, sweep.solutions).max())
        if trace.stop_reason:
            break

        p = grid[best]
        _, seed = srm.residual_data.residual(thetas[best], reduced[best])
        snapshot = sweep.solutions[:, best] if validate else truth_solve(model, p)[0]
        extended = srm.add_trial(snapshot, p)
        if extended is None:
            trace.stop_reason = "exhausted"
            break
        if surrogates[best] > _SEED_FLOOR * math.sqrt(srm.residual_data.ff):
            extended = extended.add_test(seed, p) or extended
        srm, added, beta = stabilize(extended, model, grid, delta, mode)

    logger.info("SGA-dou stopped (%s) at n=%d, n_V=%d", trace.stop_reason, srm.n, srm.n_V)
    return srm, trace
