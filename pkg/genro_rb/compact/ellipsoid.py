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

"""Axis-aligned ellipsoids with known widths."""

import numpy as np
from scipy.linalg import svd
from scipy.stats import norm, qmc

from .base import CompactSet

DEFAULT_SAMPLE_SIZE = 100_000

DECAY_LAWS = {
    "power": lambda j, rate: j ** (-rate),
    "subexponential": lambda j, rate: np.exp(-(j**rate)),
    "geometric": lambda j, rate: rate ** (-j),
}


class Ellipsoid(CompactSet):
    """
    Ellipsoid {x : Σ (x_j / c_j)² ≤ 1} with nonincreasing semiaxes c.

    Its n-width is c_{n+1}. Candidates are the 2D axis extreme points
    followed by a scrambled Halton sample of the boundary, generated on
    first use and reproducible for a fixed seed.
    """

    kind = "ellipsoid"

    def __init__(self, semiaxes, sample_size: int = DEFAULT_SAMPLE_SIZE, seed: int = 0):
        semiaxes = np.asarray(semiaxes, dtype=float)
        if semiaxes.ndim != 1 or semiaxes.size == 0:
            raise ValueError("semiaxes must be a nonempty one-dimensional sequence")
        if np.any(semiaxes <= 0) or not np.all(np.isfinite(semiaxes)):
            raise ValueError("semiaxes must be finite and strictly positive")
        if np.any(np.diff(semiaxes) > 0):
            raise ValueError("semiaxes must be sorted nonincreasing")
        if sample_size < 0:
            raise ValueError(f"sample_size must be non-negative, got {sample_size}")
        self.semiaxes = semiaxes
        self.sample_size = sample_size
        self.seed = seed
        self._candidates = None

    @classmethod
    def from_decay(cls, law: str, dimension: int, rate: float = 1.0, **kwargs) -> "Ellipsoid":
        """
        Build semiaxes c_j, j = 1..D, from a named decay law.

        Args:
            law: 'power' (j^-rate), 'subexponential' (exp(-j^rate)) or
                'geometric' (rate^-j)
            dimension: Ambient dimension D
            rate: Law parameter

        Returns:
            Ellipsoid instance
        """
        if law not in DECAY_LAWS:
            raise ValueError(f"Decay law '{law}' not found. Available: {list(DECAY_LAWS)}")
        j = np.arange(1, dimension + 1, dtype=float)
        return cls(DECAY_LAWS[law](j, rate), **kwargs)

    @property
    def dimension(self) -> int:
        return self.semiaxes.size

    def axis_points(self) -> np.ndarray:
        """Rows +c_1 e_1, -c_1 e_1, +c_2 e_2, ..."""
        points = np.zeros((2 * self.dimension, self.dimension))
        index = np.arange(self.dimension)
        points[2 * index, index] = self.semiaxes
        points[2 * index + 1, index] = -self.semiaxes
        return points

    def boundary_sample(self) -> np.ndarray:
        if self.sample_size == 0:
            return np.zeros((0, self.dimension))
        sampler = qmc.Halton(d=self.dimension, scramble=True, seed=np.random.default_rng(self.seed))
        uniform = np.clip(sampler.random(self.sample_size), 1e-12, 1.0 - 1e-12)
        directions = norm.ppf(uniform)
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        return directions * self.semiaxes

    def candidates(self) -> np.ndarray:
        if self._candidates is None:
            self._candidates = np.vstack([self.axis_points(), self.boundary_sample()])
        return self._candidates

    def farthest_point(self, basis: np.ndarray) -> tuple[float, np.ndarray]:
        """
        Exact farthest point of the ellipsoid from span(basis).

        The distance is ‖(I - QQᵀ) diag(c)‖₂ and is attained at diag(c) v for
        the leading right singular vector v.
        """
        scaled = np.diag(self.semiaxes)
        if basis.shape[1]:
            scaled = scaled - basis @ (basis.T @ scaled)
        _, sigma, vt = svd(scaled)
        direction = vt[0]
        if direction[np.argmax(np.abs(direction))] < 0:
            direction = -direction
        return float(sigma[0]), direction * self.semiaxes

    def exact_width(self, n: int) -> float:
        return float(self.semiaxes[n]) if n < self.dimension else 0.0

    def describe(self) -> str:
        head = ", ".join(f"{c:.4g}" for c in self.semiaxes[: min(4, self.dimension)])
        tail = ", ..." if self.dimension > 4 else ""
        return f"ellipsoid D={self.dimension} c=({head}{tail})"

