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

"""Truth discretization of the parametric convection-diffusion problem.

The model problem on Ω = (0,1)² with homogeneous Dirichlet conditions reads

    ε(∇u, ∇v) + (b(y)·∇u, v) + (u, v) = (1, v),    b(y) = (cos y, sin y),

with the affine decomposition θ(y) = (ε, cos y, sin y, 1) over the forms
stiffness, ∂x-convection, ∂y-convection and mass. The trial space carries
the H¹₀ seminorm, the test space ‖v‖²_V = ε|v|²_H¹ + ‖v‖²_L₂.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import TruthStabilityError
from .kernel import SpdGram, dual_norm, generalized_singular_values, min_generalized_singular
from .mesh import UniformMesh

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
TRUTH_INFSUP_FLOOR = 1e-3
INFSUP_SAMPLES = 8
SADDLE_RESIDUAL_TOL = 1e-9


@dataclass(frozen=True)
class ParameterPoint:
    """Convection angle y ∈ [0, 2π) and diffusion ε ∈ (0, 1]."""

    y: float
    epsilon: float

    def __post_init__(self):
        if not math.isfinite(self.y):
            raise ValueError(f"angle must be finite, got {self.y}")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        y = float(self.y) % TWO_PI
        object.__setattr__(self, "y", 0.0 if y >= TWO_PI else y)


def theta_eval(p: ParameterPoint) -> np.ndarray:
    """Affine coefficients (ε, cos y, sin y, 1)."""
    return np.array([p.epsilon, math.cos(p.y), math.sin(p.y), 1.0])


def angle_grid(size: int, epsilon: float, offset: float = 0.0) -> list[ParameterPoint]:
    """Uniform grid of `size` angles 2π(i + offset)/size at fixed ε."""
    if size < 1:
        raise ValueError(f"grid size must be positive, got {size}")
    return [ParameterPoint(TWO_PI * (i + offset) / size, epsilon) for i in range(size)]


@dataclass(frozen=True, eq=False)
class TruthModel:
    """Affine parametric operator family between trial and test truth spaces.

    Attributes:
        affine_ops: M sparse matrices A_k of shape (n_test, n_trial).
        gram_U: Trial Gram (H¹₀ seminorm).
        gram_V: Test Gram (ε-weighted H¹ seminorm plus L₂).
        rhs: Load vector on the test space.
        epsilon: Diffusion level the test norm was built for.
        h: Trial mesh width.
        test_refinement: Uniform refinements from the trial to the test mesh.
        prolongation: Interpolation from trial to test coefficients.
        mass_U: Trial-space mass matrix.
        trial_nodes: Coordinates of the trial degrees of freedom.
        theta: Affine coefficient map, replaceable to freeze the parameter.
        infsup: Smallest truth inf-sup constant measured at build.
    """

    affine_ops: tuple
    gram_U: SpdGram
    gram_V: SpdGram
    rhs: np.ndarray
    epsilon: float
    h: float
    test_refinement: int = 0
    prolongation: sp.csr_matrix | None = None
    mass_U: sp.csr_matrix | None = None
    trial_nodes: np.ndarray | None = None
    theta: Callable[[ParameterPoint], np.ndarray] = theta_eval
    infsup: float | None = None

    @property
    def n_trial(self) -> int:
        return self.gram_U.dimension

    @property
    def n_test(self) -> int:
        return self.gram_V.dimension

    @property
    def n_terms(self) -> int:
        return len(self.affine_ops)

    def parameter(self, y: float) -> ParameterPoint:
        return ParameterPoint(y, self.epsilon)

    def operator(self, p: ParameterPoint) -> sp.csr_matrix:
        """Sparse B_p = Σ θ_k(p) A_k."""
        theta = self.theta(p)
        result = theta[0] * self.affine_ops[0]
        for coefficient, op in zip(theta[1:], self.affine_ops[1:]):
            result = result + coefficient * op
        return result.tocsr()

    def galerkin_operator(self, p: ParameterPoint) -> sp.csr_matrix:
        """Square trial-space form Pᵀ B_p."""
        return (self.prolongation.T @ self.operator(p)).tocsr()

    def adjoint(self, ell) -> "TruthModel":
        """Model with trial and test roles exchanged and load -ℓ.

        Its truth solution is the dual solution z with b(w, z) = -ℓ(w).
        """
        ell = np.asarray(ell, dtype=float)
        if ell.shape != (self.n_trial,):
            raise ValueError(f"functional has shape {ell.shape}, expected ({self.n_trial},)")
        return replace(
            self,
            affine_ops=tuple(op.T.tocsr() for op in self.affine_ops),
            gram_U=self.gram_V,
            gram_V=self.gram_U,
            rhs=-ell,
            prolongation=None if self.prolongation is None else self.prolongation.T.tocsr(),
            mass_U=None,
            trial_nodes=None,
        )


def _restrict(matrix: sp.spmatrix, rows: np.ndarray, cols: np.ndarray) -> sp.csr_matrix:
    return sp.csr_matrix(matrix)[rows][:, cols].tocsr()


def assemble_truth(
    h: float, epsilon: float, test_refinement: int = 0, check_infsup: bool = True
) -> TruthModel:
    """Assemble the truth model on a uniform mesh of width h.

    Args:
        h: Trial mesh width; 1/h must be an integer ≥ 4.
        epsilon: Diffusion level in (0, 1].
        test_refinement: Number of uniform refinements from trial to test mesh.
            With 0 both spaces coincide as P1 spaces and carry different norms.
        check_infsup: Sample the truth inf-sup constant at build.

    Returns:
        The assembled TruthModel.

    Raises:
        ValueError: On degenerate mesh or parameter values.
        TruthStabilityError: If the truth inf-sup constant is below 1e-3.
    """
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    if test_refinement < 0:
        raise ValueError(f"test_refinement must be non-negative, got {test_refinement}")
    trial_mesh = UniformMesh.from_resolution(h)
    test_mesh = trial_mesh
    transfer = sp.identity(trial_mesh.n_nodes, format="csr")
    for _ in range(test_refinement):
        fine = test_mesh.refine()
        transfer = (test_mesh.prolongation(fine) @ transfer).tocsr()
        test_mesh = fine

    forms = test_mesh.assemble()
    trial_forms = trial_mesh.assemble() if test_refinement else forms
    test_dofs, trial_dofs = test_mesh.interior, trial_mesh.interior
    affine_ops = tuple(
        _restrict(form @ transfer, test_dofs, trial_dofs)
        for form in (forms.stiffness, forms.convection_x, forms.convection_y, forms.mass)
    )
    model = TruthModel(
        affine_ops=affine_ops,
        gram_U=SpdGram(_restrict(trial_forms.stiffness, trial_dofs, trial_dofs)),
        gram_V=SpdGram(
            _restrict(epsilon * forms.stiffness + forms.mass, test_dofs, test_dofs)
        ),
        rhs=forms.load[test_dofs],
        epsilon=epsilon,
        h=trial_mesh.h,
        test_refinement=test_refinement,
        prolongation=_restrict(transfer, test_dofs, trial_dofs),
        mass_U=_restrict(trial_forms.mass, trial_dofs, trial_dofs),
        trial_nodes=trial_mesh.nodes[trial_dofs],
    )
    logger.info(
        "assembled truth model h=%g eps=%g: N_U=%d N_V=%d",
        model.h,
        epsilon,
        model.n_trial,
        model.n_test,
    )
    if not check_infsup:
        return model
    beta = truth_infsup(model, angle_grid(INFSUP_SAMPLES, epsilon))
    if beta < TRUTH_INFSUP_FLOOR:
        raise TruthStabilityError(
            f"truth inf-sup constant {beta:.3e} is below {TRUTH_INFSUP_FLOOR:g} "
            f"at h={h}, eps={epsilon}: refine the mesh"
        )
    return replace(model, infsup=beta)


def truth_infsup(model: TruthModel, points: list[ParameterPoint]) -> float:
    """Smallest inf-sup constant of b_p between (U, |·|_H¹₀) and (V, ‖·‖_V)."""
    return min(
        min_generalized_singular(model.operator(p), model.gram_V, model.gram_U) for p in points
    )


def _check_trial_vector(model: TruthModel, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[0] != model.n_trial:
        raise ValueError(f"trial vector has length {u.shape[0]}, expected {model.n_trial}")
    return u


def apply_operator(model: TruthModel, p: ParameterPoint, u) -> np.ndarray:
    """Test functional Σ θ_k(p) A_k u."""
    u = _check_trial_vector(model, u)
    theta = model.theta(p)
    return sum(coefficient * (op @ u) for coefficient, op in zip(theta, model.affine_ops))


def u_hat_norm(model: TruthModel, p: ParameterPoint, u) -> float:
    """Renormed trial norm ‖u‖_Û = ‖B_p u‖_V'."""
    return dual_norm(model.gram_V, apply_operator(model, p, u))


def uhat_gram(model: TruthModel, p: ParameterPoint) -> SpdGram:
    """Dense Gram Aᵀ G_V⁻¹ A of the renormed trial norm at p."""
    op = model.operator(p)
    gram = op.T @ model.gram_V.solve(op.toarray())
    return SpdGram(0.5 * (gram + gram.T))


def _saddle_solve(gram: SpdGram, op: sp.csr_matrix, rhs: np.ndarray, p: ParameterPoint):
    n_test, n_trial = op.shape
    if not np.any(rhs):
        return np.zeros(n_trial), np.zeros(n_test)
    system = sp.bmat([[gram.matrix, op], [op.T, None]], format="csc")
    load = np.concatenate([rhs, np.zeros(n_trial)])
    try:
        solution = splu(system).solve(load)
    except RuntimeError as exc:
        raise TruthStabilityError(
            f"truth saddle system is singular at y={p.y:.6g}, eps={p.epsilon:g}: "
            "refine the mesh"
        ) from exc
    residual = np.linalg.norm(system @ solution - load)
    if not residual <= SADDLE_RESIDUAL_TOL * np.linalg.norm(load):
        raise TruthStabilityError(
            f"truth saddle solve at y={p.y:.6g} has relative residual "
            f"{residual / np.linalg.norm(load):.3e}: refine the mesh"
        )
    return solution[n_test:], solution[:n_test]


def truth_solve(model: TruthModel, p: ParameterPoint) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-residual truth solution and its Riesz-lifted residual.

    Solves [G_V, A_p; A_pᵀ, 0] (r; u) = (rhs; 0) by sparse direct factorization.

    Returns:
        (u, r): trial coefficients of the solution, test coefficients of the residual lift.

    Raises:
        TruthStabilityError: If the saddle system is singular.
    """
    return _saddle_solve(model.gram_V, model.operator(p), model.rhs, p)


def dual_truth_solve(model: TruthModel, p: ParameterPoint, ell) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-residual dual solution z with b_p(w, z) = -ℓ(w).

    Solves [G_U, A_pᵀ; A_p, 0] (s; z) = (-ℓ; 0).

    Returns:
        (z, s): test coefficients of the dual solution, trial coefficients of
        its residual lift.

    Raises:
        TruthStabilityError: If the test space is larger than the trial space,
            which makes the transposed saddle system singular.
    """
    if model.n_test > model.n_trial:
        raise TruthStabilityError(
            f"dual saddle system is singular for N_V={model.n_test} > N_U={model.n_trial}: "
            "use test_refinement=0 for goal-oriented runs"
        )
    return truth_solve(model.adjoint(ell), p)


def galerkin_truth_solve(model: TruthModel, p: ParameterPoint) -> np.ndarray:
    """Square Galerkin truth solution of Pᵀ B_p u = Pᵀ rhs."""
    try:
        return splu(model.galerkin_operator(p).tocsc()).solve(model.prolongation.T @ model.rhs)
    except RuntimeError as exc:
        raise TruthStabilityError(
            f"Galerkin truth system is singular at y={p.y:.6g}: refine the mesh"
        ) from exc


@dataclass(frozen=True)
class ConditioningReport:
    """Discrete stability constants of B_p in the original and renormed metrics."""

    kappa_U: float
    infsup_U: float
    continuity_U: float
    uhat_infsup: float
    uhat_continuity: float


def conditioning_report(model: TruthModel, p: ParameterPoint) -> ConditioningReport:
    """Condition of B_p measured U → U' and inf-sup measured Û → V'.

    The first degrades like ε⁻¹, the second is one up to rounding.
    """
    values = generalized_singular_values(model.galerkin_operator(p), model.gram_U, model.gram_U)
    renormed = generalized_singular_values(model.operator(p), model.gram_V, uhat_gram(model, p))
    return ConditioningReport(
        kappa_U=float(values[0] / values[-1]),
        infsup_U=float(values[-1]),
        continuity_U=float(values[0]),
        uhat_infsup=float(renormed[-1]),
        uhat_continuity=float(renormed[0]),
    )
