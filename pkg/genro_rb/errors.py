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

"""Exception hierarchy for reduced basis computations."""


class RbError(Exception):
    """Base class for all genro-rb errors."""


class FactorizationError(RbError, ValueError):
    """Gram matrix is not symmetric positive definite.

    Attributes:
        pivot: 0-based index of the first non-positive pivot, or None when
            the failure is a symmetry violation.
    """

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class TruthStabilityError(RbError):
    """Truth saddle system is singular or its inf-sup constant is too small."""


class CoercivityLossError(RbError):
    """Galerkin reduced matrix is singular."""


class StabilityBreachError(RbError):
    """Reduced saddle system is singular at a parameter."""

    def __init__(self, message: str, parameter=None):
        super().__init__(message)
        self.parameter = parameter


class EnrichmentCapError(RbError):
    """Test-space enrichment exceeded its cap or stalled."""


class TheoryViolation(RbError):
    """An inequality that must hold with exact widths was violated."""

    def __init__(self, message: str, failures: list | None = None):
        super().__init__(message)
        self.failures = failures or []
