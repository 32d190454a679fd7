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

"""Uniform P1 triangulations of the unit square and their exact element integrals."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

# Gradients of the barycentric coordinates on the reference triangle.
_REFERENCE_GRADIENTS = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class AssembledForms:
    """Unrestricted P1 matrices on all mesh nodes, boundary included.

    Row index is the test function, column index the trial function.
    """

    stiffness: sp.csr_matrix
    convection_x: sp.csr_matrix
    convection_y: sp.csr_matrix
    mass: sp.csr_matrix
    load: np.ndarray


class UniformMesh:
    """Uniform triangulation of (0,1)² with `cells` squares per side.

    Every square (i, j) is split along its diagonal from (i, j) to
    (i+1, j+1). Node k sits at (i·h, j·h) with k = i + j·(cells+1), so one
    uniform refinement is nested in the original mesh.
    """

    def __init__(self, cells: int):
        if cells < 1:
            raise ValueError(f"a mesh needs at least one cell per side, got {cells}")
        self.cells = cells
        self.h = 1.0 / cells
        side = cells + 1
        ix, iy = np.meshgrid(np.arange(side), np.arange(side), indexing="xy")
        ix, iy = ix.ravel(), iy.ravel()
        self.nodes = np.column_stack([ix, iy]) * self.h
        self.boundary = (ix == 0) | (ix == cells) | (iy == 0) | (iy == cells)
        self.interior = np.flatnonzero(~self.boundary)

        ci, cj = np.meshgrid(np.arange(cells), np.arange(cells), indexing="xy")
        a = (ci + cj * side).ravel()
        b, c, d = a + 1, a + side + 1, a + side
        self.triangles = np.vstack([np.column_stack([a, b, c]), np.column_stack([a, c, d])])

    @classmethod
    def from_resolution(cls, h: float, min_cells: int = 4) -> "UniformMesh":
        """Build the mesh of width h; 1/h must be an integer ≥ min_cells."""
        if h <= 0:
            raise ValueError(f"mesh width must be positive, got {h}")
        cells = int(round(1.0 / h))
        if abs(cells * h - 1.0) > 1e-9:
            raise ValueError(f"1/h must be an integer, got h = {h}")
        if cells < min_cells:
            raise ValueError(
                f"h = {h} gives {cells - 1} interior vertices per side, "
                f"at least {min_cells - 1} are required"
            )
        return cls(cells)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def refine(self) -> "UniformMesh":
        return UniformMesh(2 * self.cells)

    def _geometry(self) -> tuple[np.ndarray, np.ndarray]:
        coords = self.nodes[self.triangles]
        jacobian = np.stack([coords[:, 1] - coords[:, 0], coords[:, 2] - coords[:, 0]], axis=2)
        area = 0.5 * np.abs(np.linalg.det(jacobian))
        gradients = np.einsum("ik,tkj->tij", _REFERENCE_GRADIENTS, np.linalg.inv(jacobian))
        return area, gradients

    def _scatter(self, local: np.ndarray) -> sp.csr_matrix:
        rows = np.broadcast_to(self.triangles[:, :, None], local.shape)
        cols = np.broadcast_to(self.triangles[:, None, :], local.shape)
        shape = (self.n_nodes, self.n_nodes)
        return sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()

    def assemble(self) -> AssembledForms:
        """Assemble stiffness, convection, mass and unit load exactly.

        All integrands are polynomials of degree ≤ 2 on each triangle, so the
        closed-form element integrals below are exact.
        """
        area, grads = self._geometry()
        weight = area[:, None, None]
        stiffness = weight * np.einsum("tik,tjk->tij", grads, grads)
        mass = weight / 12.0 * (np.ones((3, 3)) + np.eye(3))
        # (∂u/∂x, v) on one element: ∂φ_j/∂x is constant and ∫φ_i = area/3.
        conv_x = weight / 3.0 * np.broadcast_to(grads[:, None, :, 0], stiffness.shape)
        conv_y = weight / 3.0 * np.broadcast_to(grads[:, None, :, 1], stiffness.shape)
        load = np.bincount(
            self.triangles.ravel(), weights=np.repeat(area / 3.0, 3), minlength=self.n_nodes
        )
        return AssembledForms(
            stiffness=self._scatter(stiffness),
            convection_x=self._scatter(conv_x),
            convection_y=self._scatter(conv_y),
            mass=self._scatter(np.broadcast_to(mass, stiffness.shape)),
            load=load,
        )

    def prolongation(self, fine: "UniformMesh") -> sp.csr_matrix:
        """Nodal interpolation of P1 functions from this mesh to its refinement.

        Returns:
            Sparse matrix of shape (fine.n_nodes, self.n_nodes).
        """
        if fine.cells != 2 * self.cells:
            raise ValueError(
                f"fine mesh has {fine.cells} cells per side, expected {2 * self.cells}"
            )
        side, fine_side = self.cells + 1, fine.cells + 1
        fine_index = np.arange(fine.n_nodes)
        fi, fj = fine_index % fine_side, fine_index // fine_side
        # Midpoints of horizontal, vertical and diagonal edges average the two
        # endpoints; coinciding nodes get both halves.
        low = fi // 2 + (fj // 2) * side
        high = (fi + 1) // 2 + ((fj + 1) // 2) * side
        rows = np.concatenate([fine_index, fine_index])
        cols = np.concatenate([low, high])
        values = np.full(rows.shape, 0.5)
        return sp.coo_matrix((values, (rows, cols)), shape=(fine.n_nodes, self.n_nodes)).tocsr()
