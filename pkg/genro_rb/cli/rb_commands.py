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

"""Reduced basis experiment commands for Genro CLI."""

import logging
import sys
from argparse import ArgumentParser, _SubParsersAction
from pathlib import Path

from ..errors import RbError
from ..experiments import EXIT_ERROR, EXIT_OK, EXPERIMENTS
from ..export import fixed_width_table
from ..trace import read_csv_table
from .config import ConfigError, ExperimentConfigFile

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
LOG_DATEFMT = "%H:%M:%S"

# Trace file and convergence columns used by report(), per command.
REPORT_SOURCES = {
    "sga": ("trace.csv", "surrogate_max", "dim,surrogate"),
    "sga-dou": ("trace.csv", "surrogate_max", "dim,surrogate"),
    "wgreedy": ("trace.csv", "sigma", "dim,sigma"),
    "goal": ("primal_trace.csv", "surrogate_max", "dim,surrogate"),
}


def read_manifest(run_dir: str | Path) -> dict[str, str]:
    """Read the `key = value` manifest of a run directory.

    Raises:
        FileNotFoundError: If the manifest is missing.
    """
    path = Path(run_dir) / "manifest.txt"
    if not path.is_file():
        raise FileNotFoundError(f"missing file: {path}")
    entries = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            entries[key.strip()] = value.strip()
    return entries


def _cell(text: str):
    """Numeric CSV cells become numbers for the fixed-width table."""
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _check_flags(run_dir: Path) -> dict[int, str]:
    """Worst check status per n from theory.csv: FAIL, inconclusive or pass."""
    _, rows = read_csv_table(run_dir / "theory.csv")
    rank = {"pass": 0, "skipped": 0, "inconclusive": 1, "fail": 2}
    worst: dict[int, str] = {}
    for row in rows:
        n = int(row["n"])
        status = row["status"]
        if rank.get(status, 0) >= rank.get(worst.get(n, "pass"), 0):
            worst[n] = status
    return {n: ("FAIL" if s == "fail" else s) for n, s in worst.items()}


def report(run_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Render the trace of a run as table.txt and convergence.dat.

    Args:
        run_dir: Directory written by a run.
        out_dir: Where to write; the run directory when omitted.

    Returns:
        Paths of the written files.

    Raises:
        FileNotFoundError: If the manifest or the trace is missing.
        ValueError: If the run has no trace to report.
    """
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir
    command = read_manifest(run_dir).get("command", "")
    if command not in REPORT_SOURCES:
        raise ValueError(f"runs of '{command}' have no trace to report")
    trace_name, curve_column, curve_header = REPORT_SOURCES[command]
    header, rows = read_csv_table(run_dir / trace_name)
    table_rows = [[_cell(row[name]) for name in header] for row in rows]
    if command == "wgreedy":
        flags = _check_flags(run_dir)
        header = header + ["checks"]
        for cells, row in zip(table_rows, rows):
            cells.append(flags.get(int(row["n"]), "-"))

    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / "table.txt"
    table.write_text(fixed_width_table(header, table_rows), encoding="utf-8")
    curve = out_dir / "convergence.dat"
    lines = [curve_header]
    lines += [f"{row['n']},{row[curve_column]}" for row in rows if row[curve_column] != ""]
    curve.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return [table, curve]


def run(
    config_path: str | Path,
    command: str,
    out_dir: str | Path | None = None,
    validate: bool = False,
    seed: int | None = None,
) -> int:
    """Run one experiment from a configuration file.

    Returns:
        0 on success, 2 when a theory check fails, 1 on any other error.
    """
    if command not in EXPERIMENTS:
        print(
            f"Error: Unknown command '{command}'. Available: {list(EXPERIMENTS.keys())}",
            file=sys.stderr,
        )
        return EXIT_ERROR
    experiment_class = EXPERIMENTS[command]
    try:
        config = ExperimentConfigFile.read(config_path).load(experiment_class.Config)
    except ConfigError as e:
        for problem in e.problems:
            print(problem, file=sys.stderr)
        return EXIT_ERROR

    target = Path(out_dir or config.out or Path("runs") / command)
    experiment = experiment_class(
        config, target, validate=validate, seed=config.seed if seed is None else seed
    )
    try:
        code = experiment.run()
    except (RbError, ValueError) as e:
        print(f"Error running {command}: {e}", file=sys.stderr)
        return EXIT_ERROR
    print(f"{command}: exit {code}, output in {target}")
    return code


class RbCommands:
    """Reduced basis experiment commands."""

    @staticmethod
    def add_commands(subparsers: _SubParsersAction) -> None:
        """Add one subcommand per experiment plus 'report'.

        Args:
            subparsers: Subparsers action to extend.
        """
        for command, experiment_class in EXPERIMENTS.items():
            parser = subparsers.add_parser(command, help=experiment_class.description)
            parser.add_argument("--config", required=True, help="Path of the key = value config")
            parser.add_argument("--out", help="Output directory (default: runs/<command>)")
            parser.add_argument(
                "--validate", action="store_true", help="Enable truth-sweep validation mode"
            )
            parser.add_argument("--seed", type=int, help="Seed overriding the config value")
            parser.add_argument("--verbose", action="store_true", help="Log progress at INFO")

        report_parser = subparsers.add_parser(
            "report", help="Render table.txt and convergence.dat from a run directory"
        )
        report_parser.add_argument("run_dir", help="Directory written by a run")
        report_parser.add_argument("--out", help="Output directory (default: run_dir)")
        report_parser.add_argument("--verbose", action="store_true", help="Log progress at INFO")

    @staticmethod
    def register_parser(subparsers: _SubParsersAction) -> None:
        """Register the 'rb' subcommand and its sub-subcommands.

        Args:
            subparsers: The subparsers action from the main argument parser.
        """
        rb_parser = subparsers.add_parser(
            "rb",
            help="Run reduced basis experiments",
            description="Reduced basis greedy experiments and their reports",
        )
        rb_subparsers = rb_parser.add_subparsers(
            title="experiment commands",
            dest="rb_command",
            help="Use 'genro rb <command> --help' for command-specific help",
        )
        RbCommands.add_commands(rb_subparsers)

    @staticmethod
    def dispatch(args) -> int:
        """Run the parsed command and return its exit code."""
        if not args.rb_command:
            print("Error: No command specified. Use --help for usage.", file=sys.stderr)
            return EXIT_ERROR
        logging.basicConfig(
            level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
            format=LOG_FORMAT,
            datefmt=LOG_DATEFMT,
        )
        if args.rb_command == "report":
            try:
                written = report(args.run_dir, args.out)
            except (FileNotFoundError, ValueError) as e:
                print(f"Error: {e}", file=sys.stderr)
                return EXIT_ERROR
            for path in written:
                print(f"Written: {path}")
            return EXIT_OK
        return run(args.config, args.rb_command, args.out, args.validate, args.seed)

    @staticmethod
    def execute(args) -> None:
        """Execute the rb command, exiting with its status on failure.

        Args:
            args: Parsed command-line arguments.
        """
        code = RbCommands.dispatch(args)
        if code != EXIT_OK:
            sys.exit(code)


def main(argv: list[str] | None = None) -> int:
    """Entry point of the standalone genro-rb script."""
    parser = ArgumentParser(prog="genro-rb", description="Reduced basis greedy experiments")
    subparsers = parser.add_subparsers(dest="rb_command")
    RbCommands.add_commands(subparsers)
    return RbCommands.dispatch(parser.parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
