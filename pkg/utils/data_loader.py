"""
Data loading utilities for the beable-dynamics simulator.

Scenario configs, amplitude strings, and run outputs written by cli.py.
"""

from __future__ import annotations

import json
import re
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional, Union

import pandas as pd

from config import BUILTIN_SCENARIOS, DEFAULT_SCENARIO


class ScenarioConfigError(ValueError):
    """Raised when a scenario config file cannot be parsed."""
    pass


REQUIRED_SCENARIO_KEYS = ["factors", "beables", "initial_state"]

_SQRT_RE = re.compile(r"^([+-]?)\s*sqrt\((.+)\)$")


def resolve_scenario_path(scenario: Optional[Union[str, Path]] = None) -> Path:
    """Built-in scenario name or path to a JSON file."""
    if scenario is None:
        scenario = DEFAULT_SCENARIO
    if isinstance(scenario, str) and scenario in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[scenario]
    return Path(scenario)


def load_scenario_config(scenario: Optional[Union[str, Path]] = None) -> dict[str, Any]:
    """
    Load a scenario config.

    Raises FileNotFoundError if the file is missing and ScenarioConfigError
    if it is not valid JSON or lacks required keys.
    """
    path = resolve_scenario_path(scenario)
    if not path.exists():
        raise FileNotFoundError(
            f"{path} not found (built-in scenarios: {', '.join(sorted(BUILTIN_SCENARIOS))})"
        )
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ScenarioConfigError(f"Bad scenario JSON in {path.name}: {e}") from e
    if not isinstance(cfg, dict):
        raise ScenarioConfigError(f"{path.name} must contain a JSON object")
    missing = [k for k in REQUIRED_SCENARIO_KEYS if k not in cfg]
    if missing:
        raise ScenarioConfigError(f"{path.name} is missing required keys: {missing}")
    cfg.setdefault("name", path.stem)
    return cfg


def parse_amplitude(value: Any) -> complex:
    """
    Parse an amplitude: a number, "p/q", "sqrt(p/q)", "-sqrt(p/q)",
    or a [re, im] pair of any of those.
    """
    if isinstance(value, bool):
        raise ScenarioConfigError(f"Bad amplitude {value!r}")
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ScenarioConfigError(f"Complex amplitude needs [re, im], got {value!r}")
        return complex(parse_amplitude(value[0]).real, parse_amplitude(value[1]).real)
    if isinstance(value, str):
        s = value.strip().replace(" ", "")
        m = _SQRT_RE.match(s)
        try:
            if m:
                sign = -1.0 if m.group(1) == "-" else 1.0
                radicand = Fraction(m.group(2))
                if radicand < 0:
                    raise ScenarioConfigError(f"Negative radicand in {value!r}")
                return complex(sign * float(radicand) ** 0.5)
            return complex(float(Fraction(s)))
        except (ValueError, ZeroDivisionError) as e:
            raise ScenarioConfigError(f"Bad amplitude {value!r}") from e
    raise ScenarioConfigError(f"Bad amplitude {value!r}")


def parse_system_vector(vector: dict[str, Any]) -> dict[tuple[str, ...], complex]:
    """{"head,head": amp, ...} -> {("head", "head"): amp, ...}"""
    if not isinstance(vector, dict) or not vector:
        raise ScenarioConfigError(f"Outcome vector must be a non-empty object, got {vector!r}")
    return {tuple(k.split(",")): parse_amplitude(v) for k, v in vector.items()}


def load_run_output(path: Path) -> tuple[dict[str, Any], Any]:
    """
    Read back a file written by cli.py.

    Returns (metadata, payload): for JSON the payload is the parsed object
    minus its metadata block, for CSV it is a pandas DataFrame.
    """
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        meta = data.pop("metadata", {})
        return meta, data

    with path.open("r") as f:
        first = f.readline()
        if not first.startswith("#"):
            raise RuntimeError(f"{path.name} has no metadata line")
        meta = json.loads(first[1:].strip())
        frame = pd.read_csv(f, dtype={"sector": str, "from_sector": str, "to_sector": str})
    return meta, frame
