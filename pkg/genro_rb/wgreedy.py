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
Weak greedy selection on compact sets, width oracles and the rate theorems.

The greedy error after n steps is σ_n = max_{x ∈ K} dist(x, span{x_1..x_n})
and the Kolmogorov n-width d_n is its infimum over all n-dimensional
subspaces. The checks below compare a recorded run against the rate bounds
that hold for every weak greedy selection with parameter γ.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr, svd
from scipy.optimize import minimize

from .compact import CompactSet
from .errors import TheoryViolation
from .trace import GreedyTrace, TraceRow

logger = logging.getLogger(__name__)

WGREEDY_COLUMNS = ("n", "selected", "sigma", "width_lower", "width_upper", "width_exact")
ANALYTIC_INDEX = -1
MODES = ("exact", "adversarial")

DEFAULT_WIDTH_STARTS = 50
RANK_TOL = 1e-12
TIE_TOL = 1e-12
CHECK_REL_TOL = 1e-10
CHECK_ABS_TOL = 1e-12
SMOOTHING_STAGES = (1e-1, 1e-2, 1e-3)
REFINE_MAXITER = 100


@dataclass(frozen=True)
class WidthBracket:
    """Kolmogorov width bounds; exact is None unless known in closed form."""

    lower: float
    upper: float
    exact: float | None = None


def _project_out(residual: np.ndarray, q: np.ndarray) -> np.ndarray:
    return residual - np.outer(residual @ q, q)


def _orthonormal_direction(vector: np.ndarray, basis: np.ndarray) -> np.ndarray:
    v = vector.copy()
    for _ in range(2):
        v -= basis @ (basis.T @ v)
    return v / np.linalg.norm(v)


def _choose(distances: np.ndarray, sigma: float, gamma: float, mode: str) -> int:
    if mode == "exact":
        # lowest index among numerical maximizers
        return int(np.flatnonzero(distances >= distances.max() * (1.0 - TIE_TOL))[0])
    legal = distances >= gamma * sigma * (1.0 - TIE_TOL)
    masked = np.where(legal, distances, np.inf)
    return int(np.argmin(masked))


def weak_greedy_run(
    compact: CompactSet,
    gamma: float,
    n_max: int,
    mode: str = "exact",
    widths: bool = True,
    width_starts: int = DEFAULT_WIDTH_STARTS,
    seed: int = 0,
) -> GreedyTrace:
    """
    Run the weak greedy algorithm on a compact set.

    Row n records σ_n and the index selected to pass from n to n+1
    elements. Exact mode always takes the farthest candidate, so the declared
    γ does not change the run; adversarial mode takes the nearest candidate
    still satisfying dist ≥ γ σ_n. Ties go to the lowest index. When the set
    knows its farthest point analytically, σ_n is that exact distance and the
    analytic point joins the candidates with index ANALYTIC_INDEX.

    Args:
        compact: Set to run on
        gamma: Weakness parameter in (0, 1]
        n_max: Number of selections, at most the ambient dimension
        mode: 'exact' or 'adversarial'
        widths: Attach width brackets to every row
        width_starts: Random starts of the width oracle for point clouds
        seed: Seed of the width oracle

    Returns:
        GreedyTrace with columns WGREEDY_COLUMNS

    Raises:
        ValueError: On gamma outside (0, 1], unknown mode or n_max > D
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if mode not in MODES:
        raise ValueError(f"Mode '{mode}' not found. Available: {list(MODES)}")
    if not 0 <= n_max <= compact.dimension:
        raise ValueError(f"n_max must lie in [0, {compact.dimension}], got {n_max}")

    residual = compact.candidates().copy()
    basis = np.zeros((compact.dimension, 0))
    trace = GreedyTrace(
        WGREEDY_COLUMNS,
        metadata={"gamma": gamma, "mode": mode, "set": compact.describe()},
    )
    logger.info("weak greedy on %s, gamma=%g, mode=%s", compact.describe(), gamma, mode)

    for n in range(n_max + 1):
        distances = np.linalg.norm(residual, axis=1)
        analytic = compact.farthest_point(basis)
        if analytic is not None:
            sigma, point = analytic
            point_residual = point - basis @ (basis.T @ point)
            distances = np.append(distances, np.linalg.norm(point_residual))
        else:
            sigma = float(distances.max())
        row = TraceRow(n=n, sigma=sigma)
        trace.append(row)
        logger.debug("step %d: sigma=%.6e", n, sigma)
        if n == n_max:
            trace.stop_reason = "budget"
            break
        if sigma <= CHECK_ABS_TOL * max(trace.rows[0].sigma, 1.0):
            trace.stop_reason = "exhausted"
            break

        index = _choose(distances, sigma, gamma, mode)
        if index == residual.shape[0]:
            row.selected = ANALYTIC_INDEX
            chosen = point_residual
        else:
            row.selected = index
            chosen = residual[index]
        q = _orthonormal_direction(chosen, basis)
        basis = np.column_stack([basis, q])
        residual = _project_out(residual, q)

    if widths:
        attach_widths(trace, compact, n_starts=width_starts, seed=seed)
    logger.info("weak greedy stopped (%s) after %d rows", trace.stop_reason, len(trace))
    return trace


def attach_widths(
    trace: GreedyTrace, compact: CompactSet, n_starts: int = DEFAULT_WIDTH_STARTS, seed: int = 0
) -> None:
    """Fill width_lower, width_upper and width_exact of every row in place."""
    for row in trace.rows:
        if row.n >= compact.dimension:
            row.width_lower = row.width_upper = row.width_exact = 0.0
            continue
        bracket = width_oracle(compact, row.n, n_starts=n_starts, seed=seed)
        row.width_lower, row.width_upper, row.width_exact = (
            bracket.lower,
            bracket.upper,
            bracket.exact,
        )


def _max_distance(points: np.ndarray, basis: np.ndarray) -> float:
    if basis.shape[1] == 0:
        return float(np.linalg.norm(points, axis=1).max())
    residual = points - (points @ basis) @ basis.T
    return float(np.linalg.norm(residual, axis=1).max())


def _greedy_basis(points: np.ndarray, n: int) -> np.ndarray:
    residual = points.copy()
    basis = np.zeros((points.shape[1], 0))
    for _ in range(n):
        distances = np.linalg.norm(residual, axis=1)
        index = _choose(distances, float(distances.max()), 1.0, "exact")
        if distances[index] == 0.0:
            break
        q = _orthonormal_direction(residual[index], basis)
        basis = np.column_stack([basis, q])
        residual = _project_out(residual, q)
    return basis


def _smoothed_max_distance(flat: np.ndarray, points: np.ndarray, shape, t: float):
    """Log-sum-exp of squared distances to span(W) and its gradient in W."""
    w = flat.reshape(shape)
    gram = w.T @ w
    projected = points @ w
    coefficients = np.linalg.solve(gram, projected.T).T
    squared = np.einsum("kd,kd->k", points, points) - np.einsum("kn,kn->k", projected, coefficients)
    peak = squared.max()
    weights = np.exp((squared - peak) / t)
    total = weights.sum()
    value = peak + t * math.log(total)
    weights /= total
    # d(dist²)/dW = -2 (I - P) y yᵀ W G⁻¹ summed with the softmax weights.
    t_matrix = points.T @ (weights[:, None] * coefficients)
    gradient = -2.0 * (t_matrix - w @ np.linalg.solve(gram, w.T @ t_matrix))
    return value, gradient.ravel()


def _refine_subspace(points: np.ndarray, basis: np.ndarray) -> np.ndarray:
    scale = max(_max_distance(points, basis) ** 2, np.finfo(float).tiny)
    shape = basis.shape
    w = basis
    for stage in SMOOTHING_STAGES:
        try:
            result = minimize(
                _smoothed_max_distance,
                w.ravel(),
                args=(points, shape, stage * scale),
                jac=True,
                method="L-BFGS-B",
                options={"maxiter": REFINE_MAXITER, "ftol": 1e-15, "gtol": 1e-12},
            )
        except np.linalg.LinAlgError:
            logger.debug("subspace refinement hit a rank-deficient iterate")
            break
        w, _ = qr(result.x.reshape(shape), mode="economic")
    return w


def width_oracle(
    compact: CompactSet, n: int, n_starts: int = DEFAULT_WIDTH_STARTS, seed: int = 0
) -> WidthBracket:
    """
    Bracket the Kolmogorov n-width of a compact set.

    Closed-form widths are returned as exact. For point clouds the lower
    bound is the root-mean-square POD tail, which cannot exceed the max
    distance to any n-dimensional subspace; the upper bound is the smallest
    max distance found among the POD subspace, the greedy subspace and
    n_starts random subspaces, each refined by minimizing a smoothed max.

    Raises:
        ValueError: If n is negative or not below the ambient dimension
    """
    if not 0 <= n < compact.dimension:
        raise ValueError(f"width index n must lie in [0, {compact.dimension}), got {n}")
    exact = compact.exact_width(n)
    if exact is not None:
        return WidthBracket(exact, exact, exact)

    points = compact.candidates()
    radius = float(np.linalg.norm(points, axis=1).max())
    if n == 0:
        return WidthBracket(radius, radius, radius)
    _, singular, vt = svd(points, full_matrices=False)
    rank = int(np.sum(singular > RANK_TOL * singular[0])) if singular[0] > 0 else 0
    if n >= rank:
        return WidthBracket(0.0, 0.0, 0.0)

    lower = math.sqrt(float(np.sum(singular[n:] ** 2)) / points.shape[0])
    rng = np.random.default_rng(seed)
    starts = [vt[:n].T, _greedy_basis(points, n)]
    for _ in range(n_starts):
        starts.append(qr(rng.standard_normal((compact.dimension, n)), mode="economic")[0])
    upper = radius
    for start in starts:
        if start.shape[1] < n:
            continue
        refined = _refine_subspace(points, start)
        upper = min(upper, _max_distance(points, start), _max_distance(points, refined))
    logger.debug("width %d of %s in [%.6e, %.6e]", n, compact.describe(), lower, upper)
    return WidthBracket(lower, max(upper, lower))


@dataclass(frozen=True)
class CheckResult:
    """One inequality lhs ≤ rhs evaluated at index n."""

    name: str
    n: int
    status: str
    lhs: float
    rhs: float
    exact: bool


CHECK_COLUMNS = ("check", "n", "status", "lhs", "rhs", "exact")


def _status(lhs: float, rhs: float, exact: bool) -> str:
    if lhs <= rhs * (1.0 + CHECK_REL_TOL) + CHECK_ABS_TOL:
        return "pass"
    return "fail" if exact else "inconclusive"


@dataclass
class TheoryReport:
    """Outcome of the rate checks on one trace."""

    constants: dict
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def violations(self) -> list[CheckResult]:
        return [c for c in self.checks if c.status == "fail"]

    @property
    def inconclusive(self) -> list[CheckResult]:
        return [c for c in self.checks if c.status == "inconclusive"]

    @property
    def passed(self) -> bool:
        return not self.violations

    def rows(self) -> list[tuple]:
        return [(c.name, c.n, c.status, c.lhs, c.rhs, int(c.exact)) for c in self.checks]


def _width_table(trace: GreedyTrace, compact: CompactSet):
    """Lower, upper and exact widths per trace row, NaN where unknown."""
    lower, upper, exact = [], [], []
    for row in trace.rows:
        if row.width_upper is None:
            if row.n >= compact.dimension:
                bracket = WidthBracket(0.0, 0.0, 0.0)
            else:
                bracket = width_oracle(compact, row.n)
            row_lower, row_upper, row_exact = bracket.lower, bracket.upper, bracket.exact
        else:
            row_lower, row_upper, row_exact = row.width_lower, row.width_upper, row.width_exact
        lower.append(row_lower)
        upper.append(row_upper)
        exact.append(np.nan if row_exact is None else row_exact)
    return np.array(lower, float), np.array(upper, float), np.array(exact, float)


def rate_constants(alpha: float, gamma: float) -> tuple[int, float]:
    """q = ⌈2^{α+1}/γ⌉² and C = q^{1/2}(4q)^α of the polynomial rate theorem."""
    q = math.ceil(2.0 ** (alpha + 1.0) / gamma) ** 2
    return q, math.sqrt(q) * (4.0 * q) ** alpha


def verify_rate_theorems(
    trace: GreedyTrace,
    compact: CompactSet,
    alpha: float,
    M: float | None = None,
    strict: bool = False,
) -> TheoryReport:
    """
    Check a weak greedy trace against the width-based rate bounds.

    Checks, each per index n:
      polynomial    σ_n ≤ C M n^-α, when d_m ≤ M m^-α holds for all m
      unconditional σ_2n/σ_0 ≤ γ⁻¹ (2 d_n/σ_0)^{1/2}
      direct        σ_n/σ_0 ≤ 2^{1/2} γ⁻¹ min_{1≤m<n} (d_m/σ_0)^{(n-m)/n}
      lower         d_n^lower ≤ σ_n
      sharp         σ_n ≤ 2^{n+1}/(γ 3^{1/2}) d_n, exact widths only

    The scaled checks normalize by σ_0 so that the unit-ball statements apply
    to any set. Upper widths stand in for unknown exact ones; a failure that
    depends on them is inconclusive, any other failure is a violation.

    Raises:
        TheoryViolation: When strict and at least one check fails
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not trace.rows:
        raise ValueError("trace has no rows")
    gamma = float(trace.metadata.get("gamma", 1.0))
    sigma = trace.values("sigma")
    lower, upper, exact = _width_table(trace, compact)
    have_exact = ~np.isnan(exact)
    d_up = np.where(have_exact, exact, upper)
    last = len(sigma) - 1

    q, c_const = rate_constants(alpha, gamma)
    m_index = np.arange(1, last + 1)
    if M is None:
        M = float(max(d_up[0], np.max(d_up[1:] * m_index**alpha, initial=0.0)))
    hypothesis = d_up[0] <= M * (1 + CHECK_REL_TOL) and np.all(
        d_up[1:] <= M * m_index ** (-alpha) * (1 + CHECK_REL_TOL) + CHECK_ABS_TOL
    )
    report = TheoryReport(
        constants={"gamma": gamma, "alpha": alpha, "q": q, "C": c_const, "M": M}
    )
    all_exact = bool(np.all(have_exact))
    scale = sigma[0] if sigma[0] > 0 else 1.0

    for n in range(1, last + 1):
        rhs = c_const * M * n ** (-alpha)
        status = _status(sigma[n], rhs, all_exact) if hypothesis else "skipped"
        report.checks.append(CheckResult("polynomial", n, status, sigma[n], rhs, all_exact))

    for n in range(1, last // 2 + 1):
        rhs = math.sqrt(2.0 * max(d_up[n], 0.0) / scale) / gamma
        lhs = sigma[2 * n] / scale
        ok = bool(have_exact[n])
        report.checks.append(CheckResult("unconditional", n, _status(lhs, rhs, ok), lhs, rhs, ok))

    for n in range(2, last + 1):
        exponents = (n - m_index[: n - 1]) / n
        candidates = (np.maximum(d_up[1:n], 0.0) / scale) ** exponents
        best = int(np.argmin(candidates))
        rhs = math.sqrt(2.0) / gamma * float(candidates[best])
        lhs = sigma[n] / scale
        ok = bool(have_exact[1 + best])
        report.checks.append(CheckResult("direct", n, _status(lhs, rhs, ok), lhs, rhs, ok))

    for n in range(last + 1):
        report.checks.append(
            CheckResult("lower", n, _status(lower[n], sigma[n], True), lower[n], sigma[n], True)
        )

    for n in np.flatnonzero(have_exact):
        rhs = 2.0 ** (n + 1) / (gamma * math.sqrt(3.0)) * exact[n]
        report.checks.append(
            CheckResult("sharp", int(n), _status(sigma[n], rhs, True), sigma[n], rhs, True)
        )

    if report.violations:
        logger.warning("%d rate checks failed on %s", len(report.violations), compact.describe())
        if strict:
            first = report.violations[0]
            raise TheoryViolation(
                f"{len(report.violations)} theory checks failed, first: {first.name} at "
                f"n={first.n} ({first.lhs:.6e} > {first.rhs:.6e})",
                failures=report.violations,
            )
    return report


@dataclass(frozen=True)
class DelayedInstance:
    """One triggered pair (n, m) and its consequent σ_n ≤ rhs."""

    n: int
    m: int
    status: str
    lhs: float
    rhs: float


DELAYED_COLUMNS = ("n", "m", "status", "lhs", "rhs")


@dataclass
class DelayedReport:
    """Triggered instances of the delayed comparison σ_{n+qm} ≥ θσ_n ⇒ σ_n ≤ q^{1/2} d_m."""

    q: int
    theta: float
    gamma: float
    interpretation: str
    instances: list[DelayedInstance] = field(default_factory=list)

    @property
    def violations(self) -> list[DelayedInstance]:
        return [c for c in self.instances if c.status == "fail"]

    @property
    def passed(self) -> bool:
        return not self.violations

    def rows(self) -> list[tuple]:
        return [(c.n, c.m, c.status, c.lhs, c.rhs) for c in self.instances]


def verify_delayed_comparison(
    trace: GreedyTrace, compact: CompactSet, theta: float
) -> DelayedReport:
    """
    List every (n, m), m ≥ 1, n + qm ≤ n_max, where σ_{n+qm} ≥ θ σ_n holds and
    check σ_n ≤ q^{1/2} d_m there, with q = ⌈2/(γθ)⌉².

    Raises:
        ValueError: If theta is outside (0, 1) or no exact width is known
    """
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    gamma = float(trace.metadata.get("gamma", 1.0))
    q = math.ceil(2.0 / (gamma * theta)) ** 2
    sigma = trace.values("sigma")
    _, _, exact = _width_table(trace, compact)
    # rows with n >= dimension carry the trivial width 0 and prove nothing
    nontrivial = exact[1 : compact.dimension]
    if compact.dimension > 1 and not np.any(np.isfinite(nontrivial)):
        raise ValueError(
            f"delayed comparison needs exact widths, none known for {compact.describe()}"
        )
    report = DelayedReport(
        q=q,
        theta=theta,
        gamma=gamma,
        interpretation=f"q = ceil(2 / (gamma * theta))^2 = {q}",
    )
    last = len(sigma) - 1
    for m in range(1, last // q + 1):
        if np.isnan(exact[m]):
            continue
        rhs = math.sqrt(q) * exact[m]
        for n in range(0, last - q * m + 1):
            if sigma[n + q * m] >= theta * sigma[n]:
                status = _status(sigma[n], rhs, True)
                report.instances.append(DelayedInstance(n, m, status, sigma[n], rhs))
    logger.info(
        "delayed comparison: %d instances, %s", len(report.instances), report.interpretation
    )
    return report


def fit_subexponential_rate(sigmas, alpha: float, n_range: tuple[int, int] = (3, 20)):
    """
    Least-squares fit of log σ_n against n^α over n_range (inclusive).

    Returns:
        (slope, r_squared)
    """
    sigmas = np.asarray(sigmas, dtype=float)
    n = np.arange(n_range[0], min(n_range[1], len(sigmas) - 1) + 1)
    n = n[sigmas[n] > 0]
    if n.size < 3:
        raise ValueError(f"need at least 3 positive values in {n_range}, got {n.size}")
    x, y = n.astype(float) ** alpha, np.log(sigmas[n])
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    total = np.sum((y - y.mean()) ** 2)
    r_squared = 1.0 - float(np.sum(residual**2)) / float(total) if total > 0 else 1.0
    return float(slope), r_squared
