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

"""Experiment configuration files for the genro-rb CLI.

A configuration file holds one `key = value` pair per line. Text after `#`
is a comment and blank lines are ignored. Values stay strings here; typing and
range checks belong to the pydantic model of each experiment.
"""

from pathlib import Path
from typing import Any

from pydantic import BaseModel, ValidationError

from ..errors import RbError


class ConfigError(RbError):
    """Configuration could not be read or validated.

    Attributes:
        problems: One diagnostic line per offending key.
    """

    def __init__(self, problems: list[str]):
        super().__init__("\n".join(problems))
        self.problems = problems


def _diagnostic(key: str, reason: str, line: int | None = None) -> str:
    where = f"line {line}: " if line is not None else ""
    return f"config error: {where}key '{key}': {reason}"


class ExperimentConfigFile:
    """Parsed `key = value` file with the line number of every key."""

    def __init__(self, values: dict[str, str], lines: dict[str, int], source: str = "<string>"):
        self.values = values
        self.lines = lines
        self.source = source

    @classmethod
    def parse_text(cls, text: str, source: str = "<string>") -> "ExperimentConfigFile":
        """Parse configuration text.

        Raises:
            ConfigError: On lines without '=', empty keys or duplicate keys.
        """
        values: dict[str, str] = {}
        lines: dict[str, int] = {}
        problems = []
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                problems.append(
                    f"config error: line {number}: expected 'key = value', got '{line}'"
                )
                continue
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                problems.append(f"config error: line {number}: empty key")
            elif key in values:
                problems.append(
                    _diagnostic(key, f"duplicate key, first set on line {lines[key]}", number)
                )
            else:
                values[key] = value
                lines[key] = number
        if problems:
            raise ConfigError(problems)
        return cls(values, lines, source)

    @classmethod
    def read(cls, path: str | Path) -> "ExperimentConfigFile":
        """Read and parse a configuration file.

        Raises:
            ConfigError: If the file cannot be read or parsed.
        """
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError([f"config error: cannot read {path}: {exc.strerror}"]) from exc
        return cls.parse_text(text, source=str(path))

    def load(self, model: type[BaseModel], overrides: dict[str, Any] | None = None) -> BaseModel:
        """Validate the values against a pydantic model.

        Args:
            model: Model class of the experiment.
            overrides: Values taking precedence over the file.

        Raises:
            ConfigError: With one diagnostic per failing key.
        """
        data: dict[str, Any] = dict(self.values)
        data.update(overrides or {})
        try:
            return model.model_validate(data)
        except ValidationError as exc:
            problems = []
            for error in exc.errors():
                key = str(error["loc"][0]) if error["loc"] else "<config>"
                if error["type"] == "missing":
                    reason = "missing required key"
                elif error["type"] == "extra_forbidden":
                    reason = "unknown key"
                else:
                    reason = error["msg"]
                problems.append(_diagnostic(key, reason, self.lines.get(key)))
            raise ConfigError(problems) from exc
