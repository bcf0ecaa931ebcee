#!/usr/bin/env python3
"""
Pipeline runner for the acceptance checks.

Runs the cli.py commands in order:
1. Reference states (verify-states)
2. Prediction table (table --verify)
3. Master equation oracle (oracle)
4. Ensemble simulation (simulate --verify)

Usage:
    python run_pipeline.py                    # Run full pipeline
    python run_pipeline.py --step table       # Run only the table step
    python run_pipeline.py --from oracle      # Run oracle and simulate
    python run_pipeline.py --skip simulate    # Everything but the ensemble
"""

from __future__ import annotations

import argparse
import subprocess
import sys
from typing import Optional

from config import (
    DEFAULT_SCENARIO,
    EXIT_CODES,
    REPO_ROOT,
    SIMULATION_CONFIG,
    OUTPUT_DIR,
    ensure_dirs,
)
from utils.data_loader import resolve_scenario_path


CLI = REPO_ROOT / "cli.py"

STEPS = {
    "verify": {
        "name": "Reference States",
        "args": ["verify-states"],
        "description": "Compare the evolved pilot with the hand-built states at t = 0..4",
    },
    "table": {
        "name": "Prediction Table",
        "args": ["table", "--verify"],
        "description": "Per-agent predictions for the final readout",
    },
    "oracle": {
        "name": "Master Equation Oracle",
        "args": ["oracle"],
        "description": "Sector distribution vs Born weights at every checkpoint",
    },
    "simulate": {
        "name": "Ensemble",
        "args": ["simulate", "--verify"],
        "description": "Monte Carlo trajectories and implication checks",
    },
}

STEP_ORDER = ["verify", "table", "oracle", "simulate"]

# Steps that only make sense for the extended Wigner's friend scenario
FR_ONLY = {"verify"}


def select_steps(
    step: Optional[str] = None,
    from_step: Optional[str] = None,
    skip: Optional[list[str]] = None,
) -> list[str]:
    """Steps to run, in pipeline order."""
    if step:
        steps = [step]
    elif from_step:
        steps = STEP_ORDER[STEP_ORDER.index(from_step):]
    else:
        steps = STEP_ORDER.copy()
    return [s for s in steps if s not in (skip or [])]


def run_step(step_id: str, extra_args: Optional[list[str]] = None) -> int:
    """Run a single pipeline step; returns the cli.py exit code."""
    step = STEPS[step_id]

    print(f"\n{'='*72}")
    print(f"STEP: {step['name']}")
    print(f"Command: cli.py {' '.join(step['args'])}")
    print(f"Description: {step['description']}")
    print("="*72)

    cmd = [sys.executable, str(CLI)] + step["args"]
    if extra_args:
        cmd.extend(extra_args)

    result = subprocess.run(cmd, cwd=REPO_ROOT)
    return result.returncode


def check_prerequisites(step_id: str, scenario: str) -> tuple[bool, str]:
    """Check if prerequisites for a step are met."""
    if not CLI.exists():
        return False, f"Missing {CLI}"
    path = resolve_scenario_path(scenario)
    if not path.exists():
        return False, f"Scenario {scenario!r} not found at {path}"
    if step_id in FR_ONLY and scenario != DEFAULT_SCENARIO:
        return False, f"'{step_id}' needs the {DEFAULT_SCENARIO} scenario"
    return True, ""


def parse_args() -> argparse.Namespace:
    p = argparse.ArgumentParser(
        description="Run the acceptance pipeline.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Steps (in order):
  verify     Reference pilot states and real-state weights
  table      Per-agent prediction table
  oracle     Master equation vs Born weights
  simulate   Ensemble statistics and implication checks

Examples:
  python run_pipeline.py                    # Run full pipeline
  python run_pipeline.py --step table       # Run only the table
  python run_pipeline.py --from oracle      # Run from the oracle onwards
  python run_pipeline.py --skip simulate    # Skip the ensemble
""",
    )
    p.add_argument("--step", choices=STEP_ORDER, help="Run only this specific step")
    p.add_argument(
        "--from",
        dest="from_step",
        choices=STEP_ORDER,
        help="Start from this step (run this and all following)",
    )
    p.add_argument("--skip", nargs="+", choices=STEP_ORDER, default=[], help="Skip these steps")
    p.add_argument("--scenario", default=DEFAULT_SCENARIO, help="Scenario passed to every step")
    p.add_argument("--tau", type=float, default=None, help="Measurement duration passed to every step")
    p.add_argument("--n", type=int, default=SIMULATION_CONFIG["n_runs"], help="Trajectories for the simulate step")
    p.add_argument("--seed", type=int, default=SIMULATION_CONFIG["seed"])
    p.add_argument("--jobs", type=int, default=SIMULATION_CONFIG["n_jobs"])
    return p.parse_args()


def main() -> None:
    args = parse_args()
    ensure_dirs()

    steps_to_run = select_steps(args.step, args.from_step, args.skip)
    if not steps_to_run:
        print("No steps to run.")
        return

    print("="*72)
    print("BEABLE DYNAMICS ACCEPTANCE PIPELINE")
    print("="*72)
    print(f"Steps to run: {', '.join(steps_to_run)}")
    print(f"Scenario: {args.scenario}")
    print()

    common = ["--scenario", args.scenario]
    if args.tau is not None:
        common += ["--tau", str(args.tau)]

    failed = []
    for step_id in steps_to_run:
        ok, msg = check_prerequisites(step_id, args.scenario)
        if not ok:
            print(f"\nERROR: Prerequisites not met for '{step_id}': {msg}")
            failed.append(step_id)
            break

        extra_args = list(common)
        if step_id == "simulate":
            extra_args += ["--n", str(args.n), "--seed", str(args.seed), "--jobs", str(args.jobs)]

        code = run_step(step_id, extra_args)
        if code != EXIT_CODES["ok"]:
            failed.append(step_id)
            print(f"\nSTEP FAILED: {step_id} (exit code {code})")
            break

    print("\n" + "="*72)
    print("PIPELINE COMPLETE")
    print("="*72)

    if failed:
        print(f"FAILED STEPS: {', '.join(failed)}")
        sys.exit(1)
    else:
        print("All steps completed successfully.")
        print(f"\nOutputs: {OUTPUT_DIR}/")


if __name__ == "__main__":
    main()
