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

"""Base compact set interface."""

from abc import ABC, abstractmethod

import numpy as np


class CompactSet(ABC):
    """
    Compact subset of a finite-dimensional Hilbert space.

    Subclasses expose the set through candidate points given in whitened
    coordinates, where the Hilbert norm is the Euclidean norm. Sets with an
    analytic description may also report exact farthest points and
    Kolmogorov widths.
    """

    @property
    @abstractmethod
    def kind(self) -> str:
        """Short name of the set family."""
        pass

    @property
    @abstractmethod
    def dimension(self) -> int:
        """Dimension D of the ambient space."""
        pass

    @abstractmethod
    def candidates(self) -> np.ndarray:
        """
        Candidate points in whitened coordinates.

        Returns:
            Array of shape (K, D), one point per row
        """
        pass

    def farthest_point(self, basis: np.ndarray) -> tuple[float, np.ndarray] | None:
        """
        Farthest element of the whole set from span(basis).

        Args:
            basis: Orthonormal columns (D × n) in whitened coordinates

        Returns:
            (distance, point) when known analytically, otherwise None
        """
        return None

    def exact_width(self, n: int) -> float | None:
        """Kolmogorov n-width when known in closed form, otherwise None."""
        return None

    def describe(self) -> str:
        return f"{self.kind} D={self.dimension}"
