"""
Central configuration for the Bell-Bohmian beable-dynamics simulator.

All paths, numerical thresholds, and run defaults in one place.
"""

from __future__ import annotations

import os
from fractions import Fraction
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# =============================================================================
# PATHS
# =============================================================================

REPO_ROOT = Path(__file__).resolve().parent

# Scenario configs shipped with the repo
SCENARIO_DIR = REPO_ROOT / "scenarios"

BUILTIN_SCENARIOS = {
    "frauchiger-renner": SCENARIO_DIR / "frauchiger_renner.json",
    "rotation": SCENARIO_DIR / "rotation.json",
    "idle": SCENARIO_DIR / "idle.json",
}

DEFAULT_SCENARIO = "frauchiger-renner"

# Output directories
OUTPUT_DIR = Path(os.getenv("BELLSIM_OUTPUT_DIR", str(REPO_ROOT / "data/runs")))

# =============================================================================
# SIMULATION DEFAULTS
# =============================================================================

SIMULATION_CONFIG = {
    "tau": 0.5,                    # duration of every measurement segment
    "dt_divisor": 2000,            # base step = segment duration / dt_divisor
    "min_dt_divisor": 100,
    "max_step_rate": 0.1,          # cap on total outgoing rate * dt per step
    "jump_guard": 0.5,             # one-step jump probability above this is a bug
    "max_halvings": 40,
    "n_runs": 20000,
    "seed": 42,
    "n_jobs": int(os.getenv("BELLSIM_N_JOBS", "1")),
    "starvation_fraction": 1e-3,   # forced jumps tolerated per trajectory before warning
    "branching": "record",
}

# =============================================================================
# NUMERICAL TOLERANCES
# =============================================================================

NUMERICS = {
    "norm_tol": 1e-10,             # |<psi|psi> - 1| for a normalized state
    "hermitian_tol": 1e-12,        # max |H - H^dagger|
    "unitary_tol": 1e-10,          # max |U^dagger U - I|
    "orthonormal_tol": 1e-10,      # Gram matrix of measurement outcome vectors
    "weight_floor": 1e-10,         # below this a sector is starved
    "zero_weight": 1e-20,          # below this a sector is omitted from decompositions
    "flux_floor": 1e-14,           # probability currents below this count as zero
    "branch_floor": 1e-14,         # collapse branches below this are dropped
    "drift_tol": 1e-6,             # |sum p - 1| tolerated by the master equation
    "matrix_floor": 1e-13,         # |H_ij| below this is not a coupling
}

# =============================================================================
# VERIFICATION THRESHOLDS
# =============================================================================

VERIFY_CONFIG = {
    "table_tol": 1e-9,             # prediction table vs published rationals
    "oracle_tol": 1e-3,            # master equation vs Born weights
    "pilot_tol": 1e-8,             # evolved pilot vs hand-built reference states
}

# Exit-code contract of cli.py
EXIT_CODES = {
    "ok": 0,
    "usage": 1,
    "verify_failed": 2,
    "dynamics_warning": 3,
}

# =============================================================================
# EXTENDED WIGNER'S FRIEND REFERENCE VALUES
# =============================================================================

# Outcome columns of the (x, w) prediction table, in display order
XW_OUTCOMES = [("ok", "ok"), ("ok", "fail"), ("fail", "ok"), ("fail", "fail")]

# Published per-agent predictions for (x, w) at t = 4
PUBLISHED_TABLE = {
    "F1": [Fraction(1, 12), Fraction(5, 12), Fraction(1, 12), Fraction(5, 12)],
    "F2": [Fraction(1, 12), Fraction(1, 12), Fraction(5, 12), Fraction(5, 12)],
    "A": [Fraction(1, 4), Fraction(1, 4), Fraction(1, 20), Fraction(9, 20)],
    "W": [Fraction(1, 12), Fraction(1, 12), Fraction(1, 12), Fraction(3, 4)],
}

# Printed squared amplitudes of the real-state components after each measurement.
# The t = 4 value disagrees with the expansion of the t = 4 pilot (1/48).
PUBLISHED_REAL_WEIGHTS = {
    1: Fraction(2, 3),
    2: Fraction(1, 3),
    3: Fraction(1, 12),
    4: Fraction(1, 24),
}

# Number of viable components of the pilot after each measurement
EXPECTED_COMPONENT_COUNTS = {0: 2, 1: 2, 2: 3, 3: 6, 4: 16}

# =============================================================================
# HELPER FUNCTIONS
# =============================================================================

def ensure_dirs() -> None:
    """Create all output directories if they don't exist."""
    OUTPUT_DIR.mkdir(parents=True, exist_ok=True)


def get_run_output_dir(run_name: str = "default") -> Path:
    """Get the output directory for a named run."""
    return OUTPUT_DIR / run_name
