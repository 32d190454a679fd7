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

"""Finite point clouds with a Gram inner product."""

import numpy as np

from ..kernel import SpdGram
from .base import CompactSet


class PointCloud(CompactSet):
    """Finite set of vectors in ℝ^D measured in the inner product of a Gram matrix."""

    kind = "point_cloud"

    def __init__(self, points, gram: SpdGram | None = None):
        """
        Initialize point cloud.

        Args:
            points: Array-like of shape (K, D), one point per row
            gram: Inner product; Euclidean when omitted

        Raises:
            ValueError: If the cloud is empty or the Gram dimension differs from D
        """
        self.points = np.array(points, dtype=float, ndmin=2)
        if self.points.shape[0] == 0 or self.points.shape[1] == 0:
            raise ValueError("point cloud must contain at least one point")
        self.gram = gram if gram is not None else SpdGram.identity(self.points.shape[1])
        if self.gram.dimension != self.points.shape[1]:
            raise ValueError(
                f"Gram dimension {self.gram.dimension} differs from point dimension "
                f"{self.points.shape[1]}"
            )
        # x L has Euclidean norm √(xᵀ G x) for G = L Lᵀ.
        self._whitened = self.points @ self.gram.lower

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def candidates(self) -> np.ndarray:
        return self._whitened

    def describe(self) -> str:
        return f"point_cloud K={len(self)} D={self.dimension}"
