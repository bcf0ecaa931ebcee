"""
Output formatting for the beable-dynamics simulator.

Every file written here carries a metadata block: JSON files get a top-level
"metadata" key and are dumped with sorted keys, CSV files start with a
`# {json}` comment line. Nothing time-dependent goes into either, so the
same run writes the same bytes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import TYPE_CHECKING, Any, Optional, Sequence

import pandas as pd

if TYPE_CHECKING:
    from bellsim.bell_dynamics import EnsembleStats, Trajectory
    from bellsim.fr_experiment import ImplicationReport, StateReport
    from bellsim.perspectives import PredictionTable


def build_metadata(command: str, **fields: Any) -> dict[str, Any]:
    """Metadata block for an output file; None-valued fields are dropped."""
    meta = {"command": command}
    meta.update({k: v for k, v in fields.items() if v is not None})
    return meta


def dumps_json(payload: dict[str, Any], metadata: dict[str, Any]) -> str:
    return json.dumps({**payload, "metadata": metadata}, sort_keys=True, indent=2) + "\n"


def write_json(path: Path, payload: dict[str, Any], metadata: dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(payload, metadata))


def write_csv(path: Path, frame: pd.DataFrame, metadata: dict[str, Any]) -> None:
    """Metadata comment line, then the frame without its index."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        f.write("# " + json.dumps(metadata, sort_keys=True) + "\n")
        frame.to_csv(f, index=False, lineterminator="\n", float_format="%.17g")


def write_output(
    path: Path,
    fmt: str,
    payload: dict[str, Any],
    frame: pd.DataFrame,
    metadata: dict[str, Any],
) -> Path:
    """Write the JSON payload or the CSV frame, depending on fmt."""
    if fmt == "json":
        write_json(path, payload, metadata)
    elif fmt == "csv":
        write_csv(path, frame, metadata)
    else:
        raise ValueError(f"Unknown output format {fmt!r}")
    return path


# =============================================================================
# FRAMES
# =============================================================================

def table_frame(table: "PredictionTable") -> pd.DataFrame:
    return table.to_frame()


def stats_frame(stats: "EnsembleStats") -> pd.DataFrame:
    """checkpoint,sector,frequency for every observed sector."""
    rows = stats.to_dict()["frequencies"]
    return pd.DataFrame(rows, columns=["checkpoint", "sector", "frequency"])


def oracle_frame(rows: Sequence[dict[str, Any]]) -> pd.DataFrame:
    return pd.DataFrame(
        list(rows), columns=["checkpoint", "max_deviation", "worst_sector", "probability", "born"]
    )


def state_report_frame(report: "StateReport") -> pd.DataFrame:
    checks = report.to_dict()["checks"]
    return pd.DataFrame(checks)


def trajectory_frame(traj: "Trajectory") -> pd.DataFrame:
    return pd.DataFrame(
        [{"t": j.time, "from_sector": j.source.key, "to_sector": j.target.key} for j in traj.jumps],
        columns=["t", "from_sector", "to_sector"],
    )


def write_trajectories(
    directory: Path, trajectories: Sequence["Trajectory"], metadata: dict[str, Any]
) -> list[Path]:
    """One `t,from_sector,to_sector` CSV per kept trajectory."""
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, traj in enumerate(trajectories):
        path = directory / f"trajectory_{i:05d}.csv"
        meta = {**metadata, "index": i, "initial_sector": traj.initial_sector.key}
        write_csv(path, trajectory_frame(traj), meta)
        paths.append(path)
    return paths


# =============================================================================
# CONSOLE REPORTS
# =============================================================================

def _banner(title: str) -> None:
    print("\n" + "=" * 72)
    print(title)
    print("=" * 72)


def print_table_report(table: "PredictionTable", deviation: Optional[float] = None) -> None:
    _banner("PREDICTIONS FOR THE FINAL READOUT")
    names = [table.column_name(c) for c in table.columns]
    print(f"{'agent':<10}" + "".join(f"{n:>12}" for n in names))
    print("-" * (10 + 12 * len(names)))
    for agent in table.rows:
        print(f"{agent:<10}" + "".join(f"{p:>12.6f}" for p in table.row(agent)))
    if deviation is not None:
        print(f"\nMax deviation from published table: {deviation:.3e}")


def print_stats_report(stats: "EnsembleStats", readout: Sequence[str], report: Optional["ImplicationReport"] = None) -> None:
    _banner(f"ENSEMBLE ({stats.n_runs} runs, seed {stats.seed})")
    last = stats.checkpoints[-1]
    print(f"Readout {', '.join(readout)} at t={last:g}:")
    for labels, f in stats.marginal_frequencies(last, readout).items():
        print(f"  {','.join(labels):<20} {f:.4f}")
    print(f"\nStarvation events: {stats.starvation_events}")
    print(f"Jumps after final checkpoint: {stats.jumps_after_final_checkpoint}")
    if report is None:
        return

    _banner("IMPLICATION CHECKS")
    for name, n in sorted(report.counts.items()):
        print(f"  {name:<24} {n:>8}  ({report.frequency(name):.4f})")
    print()
    print(f"  r(1)=tail => w(4)=fail   {'REFUTED' if report.tail_implies_fail_refuted else 'not refuted'}")
    print(f"  r(1)=head => z(2)=-      {'holds' if report.head_implies_minus_holds else 'VIOLATED'}")
    print(f"  z(2)=-    => x(3)=fail   {'holds' if report.minus_implies_fail_holds else 'VIOLATED'}")
    print(f"  x(3)=w(4)=ok possible    {'witnessed' if report.ok_ok_witnessed else 'not witnessed'}")
    print(f"\n  head<->tail jumps during F2: {report.head_tail_jumps_f2}")
    print(f"  exits from (tail,-,ok,ok) during W: {report.real_state_exits_w}")
    print(f"  reverse jumps: {dict(sorted(report.reverse_jumps.items()))}")


def print_oracle_report(rows: Sequence[dict[str, Any]], tolerance: float) -> None:
    _banner("MASTER EQUATION VS BORN WEIGHTS")
    print(f"{'t':>8} {'max dev':>12}  worst sector")
    for r in rows:
        flag = "" if r["max_deviation"] <= tolerance else "  <-- exceeds tolerance"
        print(f"{r['checkpoint']:>8g} {r['max_deviation']:>12.3e}  {r['worst_sector']}{flag}")


def print_state_report(report: "StateReport") -> None:
    _banner(f"REFERENCE STATES (tau={report.tau:g})")
    print(f"{'k':>3} {'pilot err':>12} {'comps':>8}  real sector        weight      printed")
    for c in report.checks:
        stated = str(c.stated_weight) if c.stated_weight is not None else "-"
        print(
            f"{c.k:>3} {c.pilot_error:>12.3e} {c.n_components:>3}/{c.expected_components:<4}"
            f"  {c.real_sector:<16} {c.real_weight:>10.6f}  {stated}"
        )
    print(f"\n(.,.,ok,ok) components at t=4: {len(report.ok_ok_components)}, total weight {report.ok_ok_total:.6f}")
    if report.discrepancies:
        print(f"Printed real-state weight differs at t = {report.discrepancies}")
    print(f"\nResult: {'PASS' if report.passed else 'FAIL'}")
