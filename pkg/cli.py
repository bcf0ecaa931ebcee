#!/usr/bin/env python3
"""
Command-line entry point for the beable-dynamics simulator.

Commands:
    table           Per-agent predictions for the final readout
    simulate        Run an ensemble of beable trajectories
    oracle          Master equation vs pilot Born weights
    verify-states   Evolved pilot vs the hand-built reference states

Usage:
    python cli.py table --verify
    python cli.py simulate --n 20000 --seed 42
    python cli.py oracle --scenario rotation
    python cli.py verify-states --tau 0.2

Exit codes: 0 ok, 1 usage or I/O error, 2 verification failed, 3 dynamics warning.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from bellsim.bell_dynamics import (
    MasterEquationError,
    StepPolicy,
    StepSizeError,
    StarvedSectorError,
    compare_to_born,
    integrate_master_equation,
    run_ensemble,
    tabulate_rates,
)
from bellsim.fr_experiment import (
    FR_JOINT_EVENTS,
    REQUIRED_CHECKPOINTS,
    Scenario,
    check_claims,
    scenario_from_config,
    verify_reference_states,
)
from bellsim.perspectives import BRANCHING_MODES, full_table, row_sums
from config import (
    EXIT_CODES,
    PUBLISHED_TABLE,
    SIMULATION_CONFIG,
    VERIFY_CONFIG,
    get_run_output_dir,
)
from utils.data_loader import load_scenario_config
from utils.formatters import (
    build_metadata,
    oracle_frame,
    print_oracle_report,
    print_state_report,
    print_stats_report,
    print_table_report,
    state_report_frame,
    stats_frame,
    table_frame,
    write_output,
    write_trajectories,
)

logger = logging.getLogger(__name__)

COMMANDS = ["table", "simulate", "oracle", "verify-states"]


@dataclass
class RunConfig:
    command: str
    n_runs: int = SIMULATION_CONFIG["n_runs"]
    seed: int = SIMULATION_CONFIG["seed"]
    tau: Optional[float] = None
    dt_divisor: int = SIMULATION_CONFIG["dt_divisor"]
    out: Optional[Path] = None
    fmt: str = "json"
    checkpoints: Optional[tuple[float, ...]] = None
    scenario: str = "frauchiger-renner"
    n_jobs: int = SIMULATION_CONFIG["n_jobs"]
    dump_trajectories: int = 0
    branching: str = SIMULATION_CONFIG["branching"]
    verify: bool = False
    verbose: bool = False

    def __post_init__(self) -> None:
        if self.command not in COMMANDS:
            raise ValueError(f"Unknown command {self.command!r}")
        if self.n_runs < 1:
            raise ValueError(f"--n must be at least 1, got {self.n_runs}")
        if self.tau is not None and not 0 < self.tau < 1:
            raise ValueError(f"--tau must lie in (0, 1), got {self.tau}")
        if self.dt_divisor < SIMULATION_CONFIG["min_dt_divisor"]:
            raise ValueError(
                f"--dt-divisor must be at least {SIMULATION_CONFIG['min_dt_divisor']}, got {self.dt_divisor}"
            )
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"--seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.fmt not in ("json", "csv"):
            raise ValueError(f"--format must be json or csv, got {self.fmt!r}")
        if self.n_jobs == 0:
            raise ValueError("--jobs must be nonzero")
        if self.dump_trajectories < 0:
            raise ValueError(f"--dump-trajectories must be non-negative, got {self.dump_trajectories}")
        if self.branching not in BRANCHING_MODES:
            raise ValueError(f"--branching must be one of {BRANCHING_MODES}")

    @property
    def policy(self) -> StepPolicy:
        return StepPolicy(dt_divisor=self.dt_divisor)

    def output_path(self, scenario_name: str) -> Path:
        if self.out is not None:
            return self.out
        return get_run_output_dir(scenario_name) / f"{self.command}.{self.fmt}"


def parse_checkpoints(value: str) -> tuple[float, ...]:
    """Comma-separated times, e.g. "0,1,2.5"."""
    try:
        return tuple(float(x) for x in value.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"Checkpoints must be comma-separated numbers, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        description="Bell-type beable dynamics and the extended Wigner's friend experiment.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python cli.py table --verify
  python cli.py table --format csv --out table.csv
  python cli.py simulate --n 20000 --seed 42 --jobs 4
  python cli.py oracle --scenario rotation
  python cli.py verify-states --tau 0.9
""",
    )
    p.add_argument("command", choices=COMMANDS, help="What to run")
    p.add_argument("--scenario", default="frauchiger-renner", help="Built-in scenario name or path to a JSON scenario")
    p.add_argument("--n", type=int, default=SIMULATION_CONFIG["n_runs"], help="Number of trajectories (simulate)")
    p.add_argument("--seed", type=int, default=SIMULATION_CONFIG["seed"], help="Root seed (simulate)")
    p.add_argument("--tau", type=float, default=None, help="Measurement duration, overrides the scenario's value")
    p.add_argument("--dt-divisor", type=int, default=SIMULATION_CONFIG["dt_divisor"], help="Base steps per segment")
    p.add_argument("--out", type=Path, default=None, help="Output file (default: data/runs/<scenario>/<command>.<format>)")
    p.add_argument("--format", dest="fmt", choices=["json", "csv"], default="json")
    p.add_argument("--checkpoints", type=parse_checkpoints, default=None, help="Comma-separated times, e.g. 0,1,2,3,4")
    p.add_argument("--jobs", type=int, default=SIMULATION_CONFIG["n_jobs"], help="Parallel workers (simulate)")
    p.add_argument("--dump-trajectories", type=int, default=0, metavar="K", help="Write the first K trajectories (simulate)")
    p.add_argument("--branching", choices=BRANCHING_MODES, default=SIMULATION_CONFIG["branching"],
                   help="How an agent weighs its outcomes (table)")
    p.add_argument("--verify", action="store_true", help="Fail with exit code 2 if the checks do not hold")
    p.add_argument("--verbose", action="store_true", help="Debug logging")
    return p


def parse_args(argv: Optional[list[str]] = None) -> RunConfig:
    args = build_parser().parse_args(argv)
    return RunConfig(
        command=args.command,
        n_runs=args.n,
        seed=args.seed,
        tau=args.tau,
        dt_divisor=args.dt_divisor,
        out=args.out,
        fmt=args.fmt,
        checkpoints=args.checkpoints,
        scenario=args.scenario,
        n_jobs=args.jobs,
        dump_trajectories=args.dump_trajectories,
        branching=args.branching,
        verify=args.verify,
        verbose=args.verbose,
    )


def load_scenario(cfg: RunConfig) -> Scenario:
    """Build the scenario named by --scenario at the requested tau."""
    return scenario_from_config(load_scenario_config(cfg.scenario), cfg.tau)


def _metadata(cfg: RunConfig, scenario: Scenario, **extra) -> dict:
    return build_metadata(
        cfg.command,
        scenario=scenario.name,
        tau=scenario.tau,
        dt_divisor=cfg.dt_divisor,
        **extra,
    )


# =============================================================================
# COMMANDS
# =============================================================================

def cmd_table(cfg: RunConfig) -> int:
    scenario = load_scenario(cfg)
    table = full_table(scenario, cfg.branching)
    deviation = table.deviation_from(PUBLISHED_TABLE) if scenario.is_frauchiger_renner else None
    sums = row_sums(table)

    out = cfg.output_path(scenario.name)
    payload = {
        "columns": [table.column_name(c) for c in table.columns],
        "rows": table.to_dict(),
        "row_sums": sums,
        "max_deviation": deviation,
    }
    write_output(out, cfg.fmt, payload, table_frame(table), _metadata(cfg, scenario, branching=cfg.branching))
    print_table_report(table, deviation)
    print(f"\nWrote {out}")

    if cfg.verify:
        tol = VERIFY_CONFIG["table_tol"]
        bad_sums = [a for a, s in sums.items() if abs(s - 1.0) > tol]
        if bad_sums or (deviation is not None and deviation > tol):
            print(f"VERIFY FAILED: deviation {deviation}, rows not summing to 1: {bad_sums}")
            return EXIT_CODES["verify_failed"]
        print("VERIFY OK")
    return EXIT_CODES["ok"]


def cmd_simulate(cfg: RunConfig) -> int:
    scenario = load_scenario(cfg)
    checkpoints = cfg.checkpoints or scenario.checkpoints
    with_claims = scenario.is_frauchiger_renner and all(
        any(abs(c - r) < 1e-12 for c in checkpoints) for r in REQUIRED_CHECKPOINTS
    )
    policy = cfg.policy

    print(f"Simulating {cfg.n_runs} trajectories of {scenario.name} (seed {cfg.seed}, tau {scenario.tau:g})")
    stats = run_ensemble(
        cfg.n_runs,
        scenario.schedule,
        scenario.spec,
        policy,
        cfg.seed,
        checkpoints,
        initial_pilot=scenario.initial_state,
        joint_events=FR_JOINT_EVENTS if with_claims else None,
        n_jobs=cfg.n_jobs,
        keep_trajectories=cfg.dump_trajectories,
    )
    report = check_claims(stats) if with_claims else None

    last = stats.checkpoints[-1]
    readout = {",".join(k): v for k, v in stats.marginal_frequencies(last, scenario.readout).items()}
    meta = _metadata(cfg, scenario, seed=cfg.seed, n_runs=cfg.n_runs, checkpoints=list(stats.checkpoints))
    payload = {
        "stats": stats.to_dict(),
        "readout": {"factors": list(scenario.readout), "checkpoint": last, "frequencies": readout},
        "implications": report.to_dict() if report is not None else None,
    }
    out = cfg.output_path(scenario.name)
    write_output(out, cfg.fmt, payload, stats_frame(stats), meta)
    print_stats_report(stats, scenario.readout, report)
    print(f"\nWrote {out}")

    if cfg.dump_trajectories:
        directory = out.parent / f"{out.stem}_trajectories"
        paths = write_trajectories(directory, stats.trajectories, meta)
        print(f"Wrote {len(paths)} trajectories to {directory}")

    limit = policy.starvation_limit(cfg.n_runs)
    if stats.starvation_events > limit:
        print(f"DYNAMICS WARNING: {stats.starvation_events} forced jumps (limit {limit})")
        return EXIT_CODES["dynamics_warning"]
    if cfg.verify and report is not None:
        ok = (
            report.tail_implies_fail_refuted and report.head_implies_minus_holds and report.minus_implies_fail_holds
            and report.ok_ok_witnessed and report.structure_ok
        )
        if not ok:
            print("VERIFY FAILED: implication checks")
            return EXIT_CODES["verify_failed"]
        print("VERIFY OK")
    return EXIT_CODES["ok"]


def cmd_oracle(cfg: RunConfig) -> int:
    scenario = load_scenario(cfg)
    checkpoints = cfg.checkpoints or scenario.checkpoints
    schedule, spec = scenario.schedule, scenario.spec

    table = tabulate_rates(schedule, scenario.initial_state, spec, cfg.policy)
    result = integrate_master_equation(schedule, scenario.initial_state, table.born_initial, spec, table=table)
    rows = compare_to_born(result, schedule, scenario.initial_state, checkpoints)

    tol = VERIFY_CONFIG["oracle_tol"]
    worst = max(rows, key=lambda r: r["max_deviation"])
    final = result.at(schedule.t_final)
    payload = {
        "checkpoints": rows,
        "max_deviation": worst["max_deviation"],
        "grid_max_deviation": result.max_deviation()[0],
        "n_steps": table.n_steps,
        "final_distribution": {spec.sector(i).key: float(p) for i, p in enumerate(final) if p > 0},
    }
    out = cfg.output_path(scenario.name)
    write_output(out, cfg.fmt, payload, oracle_frame(rows), _metadata(cfg, scenario, checkpoints=list(checkpoints)))
    print_oracle_report(rows, tol)
    print(f"\nWrote {out}")

    if worst["max_deviation"] > tol:
        print(
            f"ORACLE FAILED: sector {worst['worst_sector']} at t={worst['checkpoint']:g} has "
            f"{worst['probability']:.6f} vs Born {worst['born']:.6f}"
        )
        return EXIT_CODES["verify_failed"]
    return EXIT_CODES["ok"]


def cmd_verify_states(cfg: RunConfig) -> int:
    scenario = load_scenario(cfg)
    report = verify_reference_states(scenario)
    out = cfg.output_path(scenario.name)
    write_output(out, cfg.fmt, report.to_dict(), state_report_frame(report), _metadata(cfg, scenario))
    print_state_report(report)
    print(f"\nWrote {out}")
    return EXIT_CODES["ok"] if report.passed else EXIT_CODES["verify_failed"]


HANDLERS = {
    "table": cmd_table,
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
    "verify-states": cmd_verify_states,
}


def main(argv: Optional[list[str]] = None) -> int:
    try:
        cfg = parse_args(argv)
    except SystemExit as e:
        return EXIT_CODES["ok"] if e.code in (0, None) else EXIT_CODES["usage"]
    except ValueError as e:
        print(f"ERROR: {e}")
        return EXIT_CODES["usage"]

    logging.basicConfig(
        level=logging.DEBUG if cfg.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        return HANDLERS[cfg.command](cfg)
    except (MasterEquationError, StepSizeError, StarvedSectorError) as e:
        print(f"DYNAMICS ERROR: {e}")
        return EXIT_CODES["dynamics_warning"]
    except (FileNotFoundError, OSError, ValueError) as e:
        print(f"ERROR: {e}")
        return EXIT_CODES["usage"]


if __name__ == "__main__":
    sys.exit(main())
