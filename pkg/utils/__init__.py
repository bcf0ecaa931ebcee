"""
Shared utilities for the beable-dynamics simulator.
"""

from utils.data_loader import (
    ScenarioConfigError,
    resolve_scenario_path,
    load_scenario_config,
    parse_amplitude,
    parse_system_vector,
    load_run_output,
)

from utils.formatters import (
    build_metadata,
    dumps_json,
    write_json,
    write_csv,
    write_output,
    table_frame,
    stats_frame,
    oracle_frame,
    state_report_frame,
    trajectory_frame,
    write_trajectories,
    print_table_report,
    print_stats_report,
    print_oracle_report,
    print_state_report,
)

__all__ = [
    # Data loading
    "ScenarioConfigError",
    "resolve_scenario_path",
    "load_scenario_config",
    "parse_amplitude",
    "parse_system_vector",
    "load_run_output",
    # Output files
    "build_metadata",
    "dumps_json",
    "write_json",
    "write_csv",
    "write_output",
    "table_frame",
    "stats_frame",
    "oracle_frame",
    "state_report_frame",
    "trajectory_frame",
    "write_trajectories",
    # Console reports
    "print_table_report",
    "print_stats_report",
    "print_oracle_report",
    "print_state_report",
]
