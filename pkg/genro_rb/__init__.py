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

"""Reduced basis greedy algorithms for Genro."""

from .compact import CompactSet, Ellipsoid, PointCloud
from .errors import (
    CoercivityLossError,
    EnrichmentCapError,
    FactorizationError,
    RbError,
    StabilityBreachError,
    TheoryViolation,
    TruthStabilityError,
)
from .goal import GoalFunctional, budget_split, primal_dual_pipeline
from .kernel import SpdGram
from .rbgreedy import ReducedSpace, ResidualOfflineData, sga_run
from .stab import SaddleReducedModel, sga_dou_run, stabilize
from .trace import GreedyTrace, TraceRow
from .truth import ParameterPoint, TruthModel, assemble_truth
from .wgreedy import weak_greedy_run, width_oracle

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "CompactSet",
    "Ellipsoid",
    "PointCloud",
    "RbError",
    "FactorizationError",
    "TruthStabilityError",
    "CoercivityLossError",
    "StabilityBreachError",
    "EnrichmentCapError",
    "TheoryViolation",
    "GoalFunctional",
    "budget_split",
    "primal_dual_pipeline",
    "SpdGram",
    "ReducedSpace",
    "ResidualOfflineData",
    "sga_run",
    "SaddleReducedModel",
    "sga_dou_run",
    "stabilize",
    "GreedyTrace",
    "TraceRow",
    "ParameterPoint",
    "TruthModel",
    "assemble_truth",
    "weak_greedy_run",
    "width_oracle",
]
