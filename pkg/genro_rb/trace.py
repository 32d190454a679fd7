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

"""Per-iteration greedy records and their CSV export."""

import csv
import io
import numbers
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np


@dataclass
class TraceRow:
    """State of a greedy run after n selections.

    Only the fields relevant to a given algorithm are filled; the others
    stay None and are written as empty CSV cells.
    """

    n: int
    selected: int | None = None
    y_selected: float | None = None
    sigma: float | None = None
    surrogate_max: float | None = None
    width_lower: float | None = None
    width_upper: float | None = None
    width_exact: float | None = None
    n_V: int | None = None
    delta_certified: float | None = None
    infsup: float | None = None
    enrichment: int | None = None
    true_error_max: float | None = None
    ratio: float | None = None
    gamma_hat: float | None = None
    surr_over_apost: float | None = None


TRACE_FIELDS = tuple(f.name for f in fields(TraceRow))


def format_value(value) -> str:
    """Locale-independent text for a CSV cell; floats keep all 17 digits."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, numbers.Integral):
        return str(int(value))
    if isinstance(value, numbers.Real):
        return format(float(value), ".17g")
    return str(value)


@dataclass
class GreedyTrace:
    """Rows of a greedy run, the CSV columns it exports, and run metadata."""

    columns: tuple[str, ...]
    rows: list[TraceRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    stop_reason: str | None = None

    def __post_init__(self):
        unknown = [name for name in self.columns if name not in TRACE_FIELDS]
        if unknown:
            raise ValueError(f"unknown trace columns {unknown}; available: {list(TRACE_FIELDS)}")

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, row: TraceRow) -> None:
        self.rows.append(row)

    def column(self, name: str) -> list:
        if name not in TRACE_FIELDS:
            raise KeyError(f"Trace column '{name}' not found. Available: {list(TRACE_FIELDS)}")
        return [getattr(row, name) for row in self.rows]

    def values(self, name: str) -> np.ndarray:
        """Column as a float array, NaN where unset."""
        return np.array([np.nan if v is None else v for v in self.column(name)], dtype=float)

    def csv_text(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([format_value(getattr(row, name)) for name in self.columns])
        return buffer.getvalue()

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.csv_text(), encoding="utf-8")
        return path


def read_csv_table(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    """Read a CSV file written by this package.

    Raises:
        FileNotFoundError: If the file does not exist.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing file: {path}")
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        return list(reader.fieldnames or []), list(reader)
