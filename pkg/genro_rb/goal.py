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
Goal-oriented estimation with primal and dual reduced models.

For a linear quantity of interest I(y) = ℓ(u(y)) the dual solution z(y)
solves b_y(w, z) = -ℓ(w). The corrected value ℓ̂(ū) = ℓ(ū) - r(ū, z̄) then
errs by |b_y(u - ū, z - z̄)|, the product of the primal and dual errors.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .kernel import generalized_singular_values
from .stab import SaddleReducedModel, saddle_reduced_solve, sga_dou_run
from .trace import GreedyTrace
from .truth import (
    ParameterPoint,
    TruthModel,
    angle_grid,
    apply_operator,
    dual_truth_solve,
    truth_solve,
    u_hat_norm,
    uhat_gram,
)

logger = logging.getLogger(__name__)

GOAL_COLUMNS = (
    "y",
    "I_truth",
    "I_uncorrected",
    "I_corrected",
    "err_uncorrected",
    "err_corrected",
    "bound_product",
)
DEFAULT_BOX = ((0.7, 0.9), (0.7, 0.9))
IMPROVEMENT_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class GoalFunctional:
    """Linear functional on the trial space and a readable description of it."""

    ell: np.ndarray
    descriptor: str

    def __post_init__(self):
        ell = np.asarray(self.ell, dtype=float)
        if ell.ndim != 1:
            raise ValueError(f"functional must be a vector, got shape {ell.shape}")
        if not np.all(np.isfinite(ell)):
            raise ValueError(f"functional '{self.descriptor}' has non-finite entries")
        if not np.any(ell):
            raise ValueError(f"functional '{self.descriptor}' is zero")
        object.__setattr__(self, "ell", ell)

    def __call__(self, u) -> float:
        return float(self.ell @ u)


def mean_value_functional(model: TruthModel, box=DEFAULT_BOX) -> GoalFunctional:
    """Mean value over an axis-parallel box, lumped to the trial nodes it contains."""
    (x0, x1), (y0, y1) = box
    if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
        raise ValueError(f"box {box} is not a nonempty subset of the unit square")
    if model.mass_U is None or model.trial_nodes is None:
        raise ValueError("mean value functional needs the trial mass matrix and nodes")
    x, y = model.trial_nodes[:, 0], model.trial_nodes[:, 1]
    inside = ((x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)).astype(float)
    area = (x1 - x0) * (y1 - y0)
    return GoalFunctional(
        model.mass_U @ inside / area, f"mean value over ({x0:g},{x1:g})x({y0:g},{y1:g})"
    )


def _check_pair_lengths(model: TruthModel, u_bar, z_bar) -> tuple[np.ndarray, np.ndarray]:
    u_bar = np.asarray(u_bar, dtype=float)
    z_bar = np.asarray(z_bar, dtype=float)
    if u_bar.shape != (model.n_trial,):
        raise ValueError(f"primal vector has shape {u_bar.shape}, expected ({model.n_trial},)")
    if z_bar.shape != (model.n_test,):
        raise ValueError(f"dual vector has shape {z_bar.shape}, expected ({model.n_test},)")
    return u_bar, z_bar


def bilinear_form(model: TruthModel, p: ParameterPoint, w, v) -> float:
    """b_p(w, v) = vᵀ B_p w."""
    w, v = _check_pair_lengths(model, w, v)
    return float(v @ apply_operator(model, p, w))


def corrected_functional(
    model: TruthModel, p: ParameterPoint, u_bar, z_bar, ell: GoalFunctional
) -> float:
    """ℓ̂(ū) = ℓ(ū) - (f - B_p ū)ᵀ z̄."""
    u_bar, z_bar = _check_pair_lengths(model, u_bar, z_bar)
    if ell.ell.shape != (model.n_trial,):
        raise ValueError(f"functional has shape {ell.ell.shape}, expected ({model.n_trial},)")
    residual = model.rhs - apply_operator(model, p, u_bar)
    return ell(u_bar) - float(residual @ z_bar)


def continuity_constant(model: TruthModel, p: ParameterPoint) -> float:
    """Largest singular value of B_p from the renormed trial norm to the test norm."""
    values = generalized_singular_values(model.operator(p), model.gram_V, uhat_gram(model, p))
    return float(values[0])


def v_norm(model: TruthModel, v) -> float:
    """Test-space norm ‖v‖_V."""
    return math.sqrt(max(float(v @ model.gram_V.matvec(v)), 0.0))


def goal_error_bound_check(
    model: TruthModel, p: ParameterPoint, u_bar, z_bar, ell: GoalFunctional
) -> tuple[float, float]:
    """
    Corrected goal error and its product bound at p.

    Returns:
        (|ℓ̂(ū) - ℓ(u)|, C_b ‖u - ū‖_Û ‖z - z̄‖_V) with the measured
        continuity constant C_b
    """
    u_bar, z_bar = _check_pair_lengths(model, u_bar, z_bar)
    u, _ = truth_solve(model, p)
    z, _ = dual_truth_solve(model, p, ell.ell)
    lhs = abs(corrected_functional(model, p, u_bar, z_bar, ell) - ell(u))
    product = u_hat_norm(model, p, u - u_bar) * v_norm(model, z - z_bar)
    return lhs, continuity_constant(model, p) * product


def budget_split(alpha: float, beta: float, n: int) -> int:
    """Primal share m = ⌊αn/(α+β)⌋ of a total budget n, clamped to [1, n-1]."""
    if n < 2:
        raise ValueError(f"a primal-dual budget needs n >= 2, got {n}")
    if alpha <= 0 or beta <= 0:
        raise ValueError(f"rates must be positive, got alpha={alpha}, beta={beta}")
    return min(max(math.floor(alpha * n / (alpha + beta)), 1), n - 1)


def estimate_rate(values) -> float:
    """
    Algebraic decay rate of a sequence indexed from n = 0.

    Least-squares slope of log v_n against log n over the last ⌈K/2⌉ positive
    entries with n ≥ 1, sign flipped so that decay is positive.
    """
    values = np.asarray(values, dtype=float)
    n = np.arange(values.size)
    usable = (n >= 1) & (values > 0) & np.isfinite(values)
    n, values = n[usable], values[usable]
    tail = math.ceil(n.size / 2)
    if tail < 2:
        raise ValueError(f"need at least 2 positive values with n >= 1, got {n.size}")
    slope, _ = np.polyfit(np.log(n[-tail:]), np.log(values[-tail:]), 1)
    return float(-slope)


@dataclass
class GoalReport:
    """Per-point goal errors on the validation grid and their summary."""

    rows: list[tuple]
    summary: dict
    primal: SaddleReducedModel
    dual: SaddleReducedModel
    primal_trace: GreedyTrace
    dual_trace: GreedyTrace
    rates: dict = field(default_factory=dict)


def _truncate_to(srm: SaddleReducedModel, trace: GreedyTrace, n: int) -> SaddleReducedModel:
    row = [r for r in trace.rows if r.n <= n][-1]
    return srm.truncate(row.n, row.n_V)


def primal_dual_pipeline(
    model: TruthModel,
    grid: list[ParameterPoint],
    delta: float,
    n_total: int,
    ell: GoalFunctional,
    alpha_est: float | None = None,
    beta_est: float | None = None,
    validation_size: int = 32,
    mode: str = "greedy",
) -> GoalReport:
    """
    Primal and dual double greedy runs sharing a total budget n_total.

    Both runs go to n_total - 1. With both rates given the primal share is
    budget_split(alpha_est, beta_est, n_total); otherwise the rates are
    estimated from the surrogate traces. The runs are then truncated to
    (m, n_total - m) and the corrected goal value is evaluated on a grid
    of angles offset by half a step from the training grid.
    """
    if n_total < 2:
        raise ValueError(f"n_total must be at least 2, got {n_total}")
    if (alpha_est is None) != (beta_est is None):
        raise ValueError("give both alpha_est and beta_est, or neither")
    if model.n_test > model.n_trial:
        # dual_truth_solve raises the explanatory error
        dual_truth_solve(model, grid[0], ell.ell)
    dual_model = model.adjoint(ell.ell)
    pilot = n_total - 1
    primal, primal_trace = sga_dou_run(model, grid, delta=delta, tol=0.0, n_max=pilot, mode=mode)
    dual, dual_trace = sga_dou_run(dual_model, grid, delta=delta, tol=0.0, n_max=pilot, mode=mode)

    if alpha_est is None:
        alpha_est = estimate_rate(primal_trace.values("surrogate_max"))
        beta_est = estimate_rate(dual_trace.values("surrogate_max"))
        logger.info("estimated rates: primal %.3f, dual %.3f", alpha_est, beta_est)
    m = budget_split(max(alpha_est, 1e-6), max(beta_est, 1e-6), n_total)
    k = n_total - m
    primal = _truncate_to(primal, primal_trace, m)
    dual = _truncate_to(dual, dual_trace, k)

    rows = []
    errors_pr, errors_du = [], []
    for p in angle_grid(validation_size, model.epsilon, offset=0.5):
        u, _ = truth_solve(model, p)
        z, _ = truth_solve(dual_model, p)
        u_m = primal.trial.expand(saddle_reduced_solve(primal, p)[0])
        z_k = dual.trial.expand(saddle_reduced_solve(dual, p)[0])
        exact = ell(u)
        uncorrected = ell(u_m)
        corrected = corrected_functional(model, p, u_m, z_k, ell)
        errors_pr.append(u_hat_norm(model, p, u - u_m))
        errors_du.append(v_norm(model, z - z_k))
        rows.append(
            (
                p.y,
                exact,
                uncorrected,
                corrected,
                abs(uncorrected - exact),
                abs(corrected - exact),
                errors_pr[-1] * errors_du[-1],
            )
        )

    err_unc = np.array([r[4] for r in rows])
    err_cor = np.array([r[5] for r in rows])
    scale = max(abs(r[1]) for r in rows)
    relevant = err_unc > IMPROVEMENT_FLOOR * max(scale, 1.0)
    improved = float(np.mean(err_cor[relevant] <= err_unc[relevant])) if relevant.any() else 1.0
    summary = {
        "m": m,
        "k": k,
        "max_goal_error": float(err_cor.max()),
        "max_uncorrected_error": float(err_unc.max()),
        "sigma_pr": float(max(errors_pr)),
        "sigma_du": float(max(errors_du)),
        "product": float(max(errors_pr) * max(errors_du)),
        "fraction_improved": improved,
    }
    logger.info(
        "goal m=%d k=%d: max error %.3e, sigma product %.3e",
        m,
        k,
        summary["max_goal_error"],
        summary["product"],
    )
    return GoalReport(
        rows=rows,
        summary=summary,
        primal=primal,
        dual=dual,
        primal_trace=primal_trace,
        dual_trace=dual_trace,
        rates={"alpha": alpha_est, "beta": beta_est},
    )
