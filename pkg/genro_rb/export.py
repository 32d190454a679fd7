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

"""Plain-text writers: matrix dumps, CSV tables, fixed-width tables."""

import csv
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .trace import format_value
from .truth import TruthModel

AFFINE_NAMES = ("stiffness", "convection_x", "convection_y", "mass")


def write_matrix(path: str | Path, role: str, name: str, matrix) -> Path:
    """Dump a matrix or vector as coordinate triples.

    The header line is `%%role name rows cols nnz`, followed by one
    `row col value` line (1-based indices) per stored entry.
    """
    path = Path(path)
    if not sp.issparse(matrix):
        dense = np.asarray(matrix, dtype=float)
        if dense.ndim == 1:
            dense = dense[:, None]
        matrix = sp.coo_matrix(dense)
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    rows, cols = coo.shape
    lines = [f"%%{role} {name} {rows} {cols} {coo.nnz}"]
    for k in order:
        lines.append(f"{coo.row[k] + 1} {coo.col[k] + 1} {format_value(coo.data[k])}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def export_truth(model: TruthModel, directory: str | Path) -> list[Path]:
    """Write every affine operator, both Grams and the load, one file each."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = [
        write_matrix(directory / f"A{k + 1}_{name}.mtx", "operator", name, op)
        for k, (name, op) in enumerate(zip(AFFINE_NAMES, model.affine_ops))
    ]
    written.append(write_matrix(directory / "gram_U.mtx", "gram", "gram_U", model.gram_U.matrix))
    written.append(write_matrix(directory / "gram_V.mtx", "gram", "gram_V", model.gram_V.matrix))
    written.append(write_matrix(directory / "rhs.mtx", "rhs", "rhs", model.rhs))
    return written


def write_csv(path: str | Path, header, rows) -> Path:
    """Write rows (sequences of cells) under header with fixed formatting."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(cell) for cell in row])
    return path


def fixed_width_table(header, rows, precision: int = 6) -> str:
    """Render rows as a right-aligned fixed-width text table."""

    def cell(value) -> str:
        if value is None or value == "":
            return "-"
        if isinstance(value, float):
            return f"{value:.{precision}e}"
        return str(value)

    body = [[cell(v) for v in row] for row in rows]
    widths = [max([len(str(h))] + [len(r[i]) for r in body]) for i, h in enumerate(header)]
    lines = ["  ".join(str(h).rjust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in body)
    return "\n".join(lines) + "\n"
