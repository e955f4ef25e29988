"""
Main application file for the stability toolkit.
Runs configured analyses, exports plot data and lists the builtin systems.

Exit codes of ``run``: 0 all supported, 2 any falsified, 3 any inconclusive,
1 usage or config error.
"""

import os
import sys
import asyncio
import argparse
from typing import Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from dynamics.systems import list_systems
from orchestration.base_orchestrator import OrchestratorConfig
from orchestration.stability_orchestrator import (
    EXIT_USAGE,
    StabilityOrchestrator,
    format_validation_error,
    load_config,
)


def _env_int(name: str) -> Optional[int]:
    value = os.getenv(name)
    return int(value) if value else None


def orchestrator_config(debug: bool) -> OrchestratorConfig:
    """Orchestrator settings from the environment."""
    log_level = "DEBUG" if debug else os.getenv("STABILITY_LOG_LEVEL", "INFO")
    settings = {
        "debug": debug,
        "log_level": log_level,
        "output_dir": os.getenv("STABILITY_OUTPUT_DIR", "./outputs"),
    }
    timeout = os.getenv("STABILITY_TIMEOUT_SECONDS")
    if timeout:
        settings["timeout_seconds"] = float(timeout)
    if os.getenv("STABILITY_STAGE_DIR"):
        settings["stage_dir"] = os.getenv("STABILITY_STAGE_DIR")
    return OrchestratorConfig(**settings)


async def run_command(args) -> int:
    """Validate the config, run the analyses and write the report."""
    try:
        config = load_config(args.config)
        jobs = args.jobs if args.jobs is not None else _env_int("STABILITY_JOBS")
        config = config.with_overrides(seed=args.seed, tol=args.tol, horizon=args.horizon, jobs=jobs, out=args.out)
    except ValidationError as e:
        print(f"Config error: {format_validation_error(e)}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"Config error: {e}", file=sys.stderr)
        return EXIT_USAGE

    orchestrator = StabilityOrchestrator(config=orchestrator_config(args.debug))
    try:
        result = await orchestrator.execute_workflow("full_analysis", {"config": config})
    except OSError as e:
        print(f"Error writing the report: {e}", file=sys.stderr)
        return EXIT_USAGE

    print("\n" + "=" * 50)
    print("STABILITY ANALYSIS RESULTS")
    print("=" * 50)
    for name, status in result["report"]["summary"].items():
        print(f"  {name:<28} {status}")
    print(f"\nReport saved to: {result['report_path']}")
    return result["exit_code"]


async def export_command(args) -> int:
    """Write the CSV files of a saved report."""
    orchestrator = StabilityOrchestrator(config=orchestrator_config(args.debug))
    result = await orchestrator.execute_workflow("export_plots", {"report_path": args.report, "out_dir": args.out})
    if result["status"] != "success":
        print(f"Error: {result.get('error', result['message'])}", file=sys.stderr)
        return EXIT_USAGE
    for path in result["written"]:
        print(f"Wrote {path}")
    for name, reason in result["skipped"].items():
        print(f"Skipped {name}: {reason}")
    return 0


def list_command(args) -> int:
    for entry in list_systems():
        print(f"{entry.signature:<28} {entry.description}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Stability analysis of disturbed dynamical systems")
    parser.add_argument("--debug", action="store_true", help="Enable debug logging and progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run the analyses of a JSON config")
    run.add_argument("config", type=str, help="Path to the analysis config")
    run.add_argument("--out", type=str, help="Directory for the report")
    run.add_argument("--seed", type=int, help="Override budgets.seed")
    run.add_argument("--tol", type=float, help="Override budgets.tol")
    run.add_argument("--horizon", type=float, help="Override budgets.horizon")
    run.add_argument("--jobs", type=int, help="Override budgets.jobs")

    export = sub.add_parser("export-plots", help="Write CSV plot data from a report")
    export.add_argument("report", type=str, help="Path to a report written by 'run'")
    export.add_argument("--out", type=str, required=True, help="Directory for the CSV files")

    sub.add_parser("list-systems", help="List the builtin systems")
    return parser


def main(argv=None) -> int:
    """Main entry point for the application."""
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else 0

    if args.command == "list-systems":
        return list_command(args)
    if args.command == "export-plots":
        return asyncio.run(export_command(args))
    return asyncio.run(run_command(args))


if __name__ == "__main__":
    sys.exit(main())
