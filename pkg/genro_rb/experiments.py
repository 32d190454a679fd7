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
Experiment pipelines behind the genro-rb commands.

Each experiment declares its command name and a pydantic Config model as
class attributes, runs one pipeline and writes its files into an output
directory. Experiments are looked up by command in EXPERIMENTS.

Example:
    class MyExperiment(Experiment):
        command = "my-run"
        Config = SgaConfig

        def execute(self) -> int:
            ...
            return 0
"""

import logging
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Annotated, Any, Literal

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, field_validator, model_validator

from . import __version__
from .compact import CompactSet, Ellipsoid, PointCloud
from .export import export_truth, write_csv
from .goal import GOAL_COLUMNS, mean_value_functional, primal_dual_pipeline
from .mesh import UniformMesh
from .rbgreedy import sga_run
from .stab import sga_dou_run
from .trace import format_value
from .truth import angle_grid, assemble_truth
from .wgreedy import (
    CHECK_COLUMNS,
    DELAYED_COLUMNS,
    verify_delayed_comparison,
    verify_rate_theorems,
    weak_greedy_run,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_THEORY_VIOLATION = 2


def parse_number(value) -> float:
    """Parse '0.25', '1/32' or '2^-10' into a float."""
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip().replace(" ", "")
    if not text:
        raise ValueError("expected a number, got an empty value")
    try:
        if "/" in text:
            numerator, denominator = text.split("/", 1)
            return parse_number(numerator) / parse_number(denominator)
        if "^" in text:
            base, exponent = text.split("^", 1)
            return float(base) ** float(exponent)
        return float(text)
    except ZeroDivisionError as exc:
        raise ValueError(f"division by zero in '{value}'") from exc
    except (ValueError, OverflowError) as exc:
        raise ValueError(f"not a number: '{value}'") from exc


Number = Annotated[float, BeforeValidator(parse_number)]
PositiveNumber = Annotated[float, BeforeValidator(parse_number), Field(gt=0)]


class ExperimentConfig(BaseModel):
    """Keys shared by every experiment."""

    model_config = ConfigDict(extra="forbid")

    out: str | None = None
    seed: int = Field(default=0, ge=0, lt=2**64)


class TruthConfig(ExperimentConfig):
    h: Number = Field(gt=0, le=0.25)
    epsilon: Number = Field(gt=0, le=1)
    test_refinement: int = Field(default=0, ge=0, le=2)

    @field_validator("h")
    @classmethod
    def _integer_cells(cls, h: float) -> float:
        UniformMesh.from_resolution(h)
        return h


class SgaConfig(TruthConfig):
    grid_size: int = Field(default=128, ge=1)
    tol: Number = Field(default=1e-6, ge=0)
    n_max: int = Field(default=50, ge=1)


class SgaDouConfig(TruthConfig):
    grid_size: int = Field(default=64, ge=1)
    delta: Number = Field(default=0.1, gt=0, lt=1)
    tol: Number = Field(default=1e-6, ge=0)
    n_max: int = Field(default=50, ge=1)
    mode: Literal["greedy", "full"] = "greedy"
    truth_accuracy: PositiveNumber | None = None


class WgreedyConfig(ExperimentConfig):
    set_kind: Literal["ellipsoid", "point_cloud"] = "ellipsoid"
    decay: Literal["power", "subexponential", "geometric"] = "power"
    decay_rate: Number = Field(default=1.0, gt=0)
    dimension: int = Field(default=32, ge=1, le=512)
    gamma: Number = Field(default=1.0, gt=0, le=1)
    mode: Literal["exact", "adversarial"] = "exact"
    n_max: int = Field(default=20, ge=0)
    alpha: Number = Field(default=1.0, gt=0)
    theta: Number = Field(default=0.9, gt=0, lt=1)
    sample_size: int = Field(default=100_000, ge=0)
    cloud_size: int = Field(default=200, ge=1)
    n_starts: int = Field(default=50, ge=0)
    corrupt_trace: bool = False

    @model_validator(mode="after")
    def _budget_within_dimension(self) -> "WgreedyConfig":
        if self.n_max > self.dimension:
            raise ValueError(f"n_max = {self.n_max} exceeds dimension = {self.dimension}")
        if self.decay == "geometric" and self.decay_rate <= 1:
            raise ValueError(f"geometric decay needs decay_rate > 1, got {self.decay_rate}")
        return self


class GoalConfig(TruthConfig):
    grid_size: int = Field(default=64, ge=1)
    validation_size: int = Field(default=32, ge=1)
    delta: Number = Field(default=0.1, gt=0, lt=1)
    n_total: int = Field(default=12, ge=2)
    mode: Literal["greedy", "full"] = "greedy"
    alpha_est: PositiveNumber | None = None
    beta_est: PositiveNumber | None = None
    box_x0: Number = Field(default=0.7, ge=0, le=1)
    box_x1: Number = Field(default=0.9, ge=0, le=1)
    box_y0: Number = Field(default=0.7, ge=0, le=1)
    box_y1: Number = Field(default=0.9, ge=0, le=1)

    @model_validator(mode="after")
    def _consistent(self) -> "GoalConfig":
        if (self.alpha_est is None) != (self.beta_est is None):
            raise ValueError("give both alpha_est and beta_est, or neither")
        if not (self.box_x0 < self.box_x1 and self.box_y0 < self.box_y1):
            raise ValueError("goal box must have box_x0 < box_x1 and box_y0 < box_y1")
        return self


class Experiment:
    """
    Base class for experiment pipelines.

    Subclasses set `command`, `Config` and `description` and implement
    execute(), which returns an exit code.
    """

    command: str = None
    Config: type[ExperimentConfig] = None
    description: str = ""

    def __init__(
        self,
        config: ExperimentConfig,
        out_dir: str | Path,
        validate: bool = False,
        seed: int = 0,
    ):
        self._validate_configuration()
        if not isinstance(config, self.Config):
            raise TypeError(
                f"{self.__class__.__name__}: expected {self.Config.__name__}, "
                f"got {type(config).__name__}"
            )
        self.config = config
        self.out_dir = Path(out_dir)
        self.validate = validate
        self.seed = seed
        self.timings: dict[str, float] = {}
        self.results: dict[str, Any] = {}
        self.exit_code: int | None = None

    def _validate_configuration(self) -> None:
        """Validate that required class attributes are set."""
        if self.command is None:
            raise ValueError(f"{self.__class__.__name__}: command must be defined")
        if self.Config is None:
            raise ValueError(f"{self.__class__.__name__}: Config model must be defined")
        if not issubclass(self.Config, ExperimentConfig):
            raise ValueError(f"{self.__class__.__name__}: Config must derive from ExperimentConfig")

    @contextmanager
    def timed(self, phase: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[phase] = time.perf_counter() - start

    def run(self) -> int:
        """Execute the pipeline and write the manifest, whatever the outcome."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        logger.info("running %s into %s", self.command, self.out_dir)
        try:
            with self.timed("total"):
                self.exit_code = self.execute()
        finally:
            self.write_manifest()
        return self.exit_code

    def execute(self) -> int:
        raise NotImplementedError(f"{self.__class__.__name__} must implement execute()")

    def manifest(self) -> dict[str, Any]:
        entries: dict[str, Any] = {
            "command": self.command,
            "version": __version__,
            "seed": self.seed,
            "validate": self.validate,
            "exit_code": self.exit_code,
        }
        entries.update({f"config.{k}": v for k, v in self.config.model_dump().items()})
        entries.update({f"result.{k}": v for k, v in self.results.items()})
        entries.update({f"timing.{k}": v for k, v in self.timings.items()})
        return entries

    def write_manifest(self) -> Path:
        path = self.out_dir / "manifest.txt"
        lines = [f"{key} = {format_value(value)}" for key, value in self.manifest().items()]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    def truth_model(self):
        with self.timed("truth"):
            return assemble_truth(
                self.config.h, self.config.epsilon, test_refinement=self.config.test_refinement
            )


class BuildTruthExperiment(Experiment):
    command = "build-truth"
    Config = TruthConfig
    description = "Assemble the truth model and dump its affine operators and Grams"

    def execute(self) -> int:
        model = self.truth_model()
        with self.timed("export"):
            written = export_truth(model, self.out_dir / "matrices")
        self.results.update(
            n_trial=model.n_trial,
            n_test=model.n_test,
            truth_infsup=model.infsup,
            files=len(written),
        )
        return EXIT_OK


class SgaExperiment(Experiment):
    command = "sga"
    Config = SgaConfig
    description = "Surrogate greedy with Galerkin reduced solutions"

    def execute(self) -> int:
        model = self.truth_model()
        grid = angle_grid(self.config.grid_size, self.config.epsilon)
        with self.timed("greedy"):
            space, trace = sga_run(
                model, grid, self.config.tol, self.config.n_max, validate=self.validate
            )
        trace.to_csv(self.out_dir / "trace.csv")
        self.results.update(n=space.dimension, stop_reason=trace.stop_reason)
        if "gamma_theory" in trace.metadata:
            self.results["gamma_theory"] = trace.metadata["gamma_theory"]
        return EXIT_OK


class SgaDouExperiment(Experiment):
    command = "sga-dou"
    Config = SgaDouConfig
    description = "Double greedy with certified supremizer enrichment"

    def execute(self) -> int:
        model = self.truth_model()
        grid = angle_grid(self.config.grid_size, self.config.epsilon)
        with self.timed("greedy"):
            srm, trace = sga_dou_run(
                model,
                grid,
                delta=self.config.delta,
                tol=self.config.tol,
                n_max=self.config.n_max,
                mode=self.config.mode,
                validate=self.validate,
                truth_accuracy=self.config.truth_accuracy,
            )
        trace.to_csv(self.out_dir / "trace.csv")
        self.results.update(n=srm.n, n_V=srm.n_V, stop_reason=trace.stop_reason)
        return EXIT_OK


class WgreedyExperiment(Experiment):
    command = "wgreedy"
    Config = WgreedyConfig
    description = "Weak greedy on a model compact set and the rate theorem checks"

    def compact_set(self) -> CompactSet:
        config = self.config
        ellipsoid = Ellipsoid.from_decay(
            config.decay,
            config.dimension,
            config.decay_rate,
            sample_size=config.sample_size,
            seed=self.seed,
        )
        if config.set_kind == "ellipsoid":
            return ellipsoid
        rng = np.random.default_rng(self.seed)
        directions = rng.standard_normal((config.cloud_size, config.dimension))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        return PointCloud(directions * ellipsoid.semiaxes)

    def execute(self) -> int:
        config = self.config
        compact = self.compact_set()
        with self.timed("greedy"):
            trace = weak_greedy_run(
                compact,
                config.gamma,
                config.n_max,
                mode=config.mode,
                width_starts=config.n_starts,
                seed=self.seed,
            )
        if config.corrupt_trace and len(trace) > 1:
            logger.warning("corrupting sigma at n=1 to exercise the violation path")
            trace.rows[1].sigma = 0.0
        trace.to_csv(self.out_dir / "trace.csv")

        with self.timed("checks"):
            theory = verify_rate_theorems(trace, compact, config.alpha)
            delayed = None
            if compact.exact_width(0) is not None:
                delayed = verify_delayed_comparison(trace, compact, config.theta)
        write_csv(self.out_dir / "theory.csv", CHECK_COLUMNS, theory.rows())
        violations = len(theory.violations)
        if delayed is not None:
            write_csv(self.out_dir / "delayed.csv", DELAYED_COLUMNS, delayed.rows())
            violations += len(delayed.violations)
            self.results.update(delayed_q=delayed.q, delayed_instances=len(delayed.instances))
        self.results.update(
            set=compact.describe(),
            stop_reason=trace.stop_reason,
            checks=len(theory.checks),
            inconclusive=len(theory.inconclusive),
            violations=violations,
        )
        self.results.update({f"constant_{k}": v for k, v in theory.constants.items()})
        return EXIT_THEORY_VIOLATION if violations else EXIT_OK


class GoalExperiment(Experiment):
    command = "goal"
    Config = GoalConfig
    description = "Primal-dual double greedy for a mean-value quantity of interest"

    def execute(self) -> int:
        config = self.config
        model = self.truth_model()
        box = ((config.box_x0, config.box_x1), (config.box_y0, config.box_y1))
        ell = mean_value_functional(model, box)
        grid = angle_grid(config.grid_size, config.epsilon)
        with self.timed("pipeline"):
            report = primal_dual_pipeline(
                model,
                grid,
                config.delta,
                config.n_total,
                ell,
                alpha_est=config.alpha_est,
                beta_est=config.beta_est,
                validation_size=config.validation_size,
                mode=config.mode,
            )
        write_csv(self.out_dir / "goal.csv", GOAL_COLUMNS, report.rows)
        report.primal_trace.to_csv(self.out_dir / "primal_trace.csv")
        report.dual_trace.to_csv(self.out_dir / "dual_trace.csv")
        self.results.update(functional=ell.descriptor, **report.summary, **report.rates)
        return EXIT_OK


class ExperimentsRegistry:
    """Registry of experiment classes with dict-like access by command name."""

    def __init__(self):
        self._experiments = {}

    def register(self, experiment_class: type[Experiment]) -> type[Experiment]:
        """
        Register an experiment class under its command.

        Args:
            experiment_class: Experiment subclass

        Returns:
            The class itself, so that this can be used as a decorator
        """
        self._experiments[experiment_class.command] = experiment_class
        return experiment_class

    def __getattr__(self, name: str) -> type[Experiment]:
        """Access experiment by command as attribute, with '_' standing for '-'."""
        if name.startswith("_"):
            raise AttributeError(f"'{self.__class__.__name__}' object has no attribute '{name}'")
        command = name.replace("_", "-")
        if command in self._experiments:
            return self._experiments[command]
        raise AttributeError(
            f"Experiment '{command}' not found. Available: {list(self._experiments.keys())}"
        )

    def __getitem__(self, command: str) -> type[Experiment]:
        if command not in self._experiments:
            raise KeyError(
                f"Experiment '{command}' not found. Available: {list(self._experiments.keys())}"
            )
        return self._experiments[command]

    def __contains__(self, command: str) -> bool:
        return command in self._experiments

    def keys(self):
        return self._experiments.keys()

    def values(self):
        return self._experiments.values()

    def items(self):
        return self._experiments.items()


EXPERIMENTS = ExperimentsRegistry()
for _experiment in (
    BuildTruthExperiment,
    SgaExperiment,
    SgaDouExperiment,
    WgreedyExperiment,
    GoalExperiment,
):
    EXPERIMENTS.register(_experiment)
