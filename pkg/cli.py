"""
Command-line runner for scenario files.

    python cli.py run scenarios/frobenius_rotation_dilation.toml
    python cli.py converge scenarios/vae_convergence_rotation.toml --levels 3
    python cli.py list-builtins

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 integration or instability error.
"""
import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

import settings
from currents import BUILTIN_SHAPES
from errors import ConfigError, GeoTransportError, InstabilityError
from fields import list_builtins
from scenario import Scenario, load_scenario, run_convergence, run_experiment

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

RESULT_COLUMNS = ["name", "value", "bound", "pass"]
CONVERGENCE_COLUMNS = ["level", "resolution", "h", "l2_error", "order"]


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")


def _write_json(path: str, data: Dict[str, Any]) -> None:
    with open(path, "w") as f:
        json.dump(data, f, indent=2, default=_jsonable)
        f.write("\n")


def _write_csv(path: str, columns: List[str], rows: List[Dict[str, Any]]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: (repr(value) if isinstance(value, float) else value) for key, value in row.items()})


def scenario_dir(out_dir: str, name: str) -> str:
    path = os.path.join(out_dir, name)
    os.makedirs(path, exist_ok=True)
    return path


def write_outputs(
    out_dir: str,
    name: str,
    checks: List[Dict[str, Any]],
    passed: bool,
    reason: Optional[str] = None,
    message: Optional[str] = None,
    diagnostics: Optional[Dict[str, Any]] = None,
) -> str:
    """results.csv, summary.json and diagnostics.json under <out_dir>/<name>/"""
    target = scenario_dir(out_dir, name)
    _write_csv(os.path.join(target, "results.csv"), RESULT_COLUMNS, checks)
    summary = {"scenario": name, "pass": passed, "checks": checks, "reason": reason}
    if message is not None:
        summary["message"] = message
    _write_json(os.path.join(target, "summary.json"), summary)
    if diagnostics:
        _write_json(os.path.join(target, "diagnostics.json"), diagnostics)
    return target


def _error_outcome(out_dir: str, name: str, exc: GeoTransportError) -> int:
    code = EXIT_CONFIG if isinstance(exc, ConfigError) else EXIT_NUMERIC
    diagnostics = {"step": exc.step} if isinstance(exc, InstabilityError) else None
    if getattr(exc, "position", None) is not None:
        diagnostics = {"position": exc.position}
    logger.error("Scenario '%s' failed: %s", name, exc)
    write_outputs(out_dir, name, [], False, exc.reason, str(exc), diagnostics)
    return code


def _invalid_value(exc: Exception) -> ConfigError:
    """Untyped scenario entries (seeds, expected, ...) that fail inside a runner"""
    return ConfigError(f"Invalid scenario value: {exc}", reason="invalid_param")


def run_scenario(path: str, out_dir: str, overrides: Optional[Dict[str, Any]] = None) -> int:
    """
    Load, run and report one scenario file.

    Returns:
        Exit status: 0 pass, 1 failed check, 2 config error, 3 numeric failure
    """
    name = Path(path).stem
    try:
        scenario = load_scenario(path, overrides)
        name = scenario.name
        checks, diagnostics = run_experiment(scenario)
    except GeoTransportError as exc:
        return _error_outcome(out_dir, name, exc)
    except (TypeError, ValueError) as exc:
        return _error_outcome(out_dir, name, _invalid_value(exc))

    passed = all(row["pass"] for row in checks)
    failed = [row["name"] for row in checks if not row["pass"]]
    target = write_outputs(
        out_dir, name, checks, passed,
        None if passed else "assertion_failed",
        None if passed else f"Failed checks: {', '.join(failed)}",
        diagnostics,
    )
    logger.info("Scenario '%s': %s (%d checks) -> %s", name, "PASS" if passed else "FAIL", len(checks), target)
    return EXIT_PASS if passed else EXIT_FAIL


def _as_convergence(scenario: Scenario) -> Scenario:
    """Turn a vae_compare or alfven scenario into its convergence study"""
    if scenario.kind == "convergence":
        return scenario
    if scenario.kind not in ("vae_compare", "alfven"):
        raise ConfigError(f"Scenario kind '{scenario.kind}' has no convergence study")
    scenario.params.setdefault("base", "vae" if scenario.kind == "vae_compare" else "alfven")
    if "resolutions" not in scenario.params:
        scenario.params["resolutions"] = [int(scenario.params.get("resolution", 32))]
    scenario.kind = "convergence"
    return scenario


def run_convergence_study(path: str, out_dir: str, levels: Optional[int], overrides: Optional[Dict[str, Any]] = None) -> int:
    """Run the refinement levels of a scenario and write convergence.csv next to the summary"""
    name = Path(path).stem
    try:
        scenario = _as_convergence(load_scenario(path, overrides))
        name = scenario.name
        if levels is None and len(scenario.params["resolutions"]) < 2:
            raise ConfigError("A convergence study needs --levels or at least two params.resolutions")
        checks, study = run_convergence(scenario, levels)
    except GeoTransportError as exc:
        return _error_outcome(out_dir, name, exc)
    except (TypeError, ValueError) as exc:
        return _error_outcome(out_dir, name, _invalid_value(exc))

    passed = all(row["pass"] for row in checks)
    target = write_outputs(
        out_dir, name, checks, passed,
        None if passed else ("study_failed" if study["status"] == "non_monotone" else "assertion_failed"),
        None, {"status": study["status"], "orders": study["orders"]},
    )
    _write_csv(os.path.join(target, "convergence.csv"), CONVERGENCE_COLUMNS, study["rows"])
    print(f"Convergence table saved to {os.path.join(target, 'convergence.csv')}")
    return EXIT_PASS if passed else EXIT_FAIL


def print_builtins() -> None:
    print("Fields:")
    for row in list_builtins():
        print(f"  {row['name']:<24} dims {row['dims']}")
    print(f"  {'gaussian_curl':<24} dims [2, 3]")
    print("Shapes:")
    for shape in BUILTIN_SHAPES:
        print(f"  {shape}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Run transport scenarios and convergence studies")
    parser.add_argument("--out", default=settings.DEFAULT_OUT_DIR, help="Output directory for results")
    parser.add_argument("--dt", type=float, default=None, help="Override the integrator step")
    parser.add_argument("--res", type=int, default=None, help="Override the grid resolution")
    parser.add_argument("--seed", type=int, default=None, help="Override the random seed")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL, help="Logging level (default from GEOTRANSPORT_LOG_LEVEL)")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run one or more scenario files")
    run.add_argument("configs", nargs="+", help="Scenario TOML files")

    converge = commands.add_parser("converge", help="Run a convergence study")
    converge.add_argument("config", help="Scenario TOML file")
    converge.add_argument("--levels", type=int, default=None, help="Number of refinement levels")

    commands.add_parser("list-builtins", help="List builtin fields and shapes")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    overrides = {"dt": args.dt, "resolution": args.res, "seed": args.seed}

    if args.command == "list-builtins":
        print_builtins()
        return EXIT_PASS
    if args.command == "converge":
        return run_convergence_study(args.config, args.out, args.levels, overrides)

    os.makedirs(args.out, exist_ok=True)
    codes = [run_scenario(path, args.out, overrides) for path in args.configs]
    print(f"Results saved to {args.out}")
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
