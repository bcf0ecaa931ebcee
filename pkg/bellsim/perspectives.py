"""
Per-agent predictions for the final readout: each predicting agent applies
the projection postulate to its own measurement only and evolves everything
else unitarily. The God's-eye row never collapses.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence, Union

import pandas as pd

from bellsim.beables import born_weights, decompose, marginal
from bellsim.bell_dynamics import propagate_pilot
from bellsim.fr_experiment import Scenario
from bellsim.tensor_core import StateVector, project
from config import NUMERICS, SIMULATION_CONFIG

logger = logging.getLogger(__name__)


class AgentError(ValueError):
    """Raised when an agent has no measurement or cannot make a prediction."""
    pass


BRANCHING_MODES = ("record", "coherent")

Distribution = dict[tuple[str, ...], float]


@dataclass
class PredictionTable:
    columns: tuple[tuple[str, ...], ...]
    rows: dict[str, Distribution]

    @staticmethod
    def column_name(labels: Sequence[str]) -> str:
        return "_".join(labels)

    def row(self, agent: str) -> list[float]:
        return [self.rows[agent].get(c, 0.0) for c in self.columns]

    def to_frame(self) -> pd.DataFrame:
        records = [
            {"agent": agent, **{self.column_name(c): p for c, p in zip(self.columns, self.row(agent))}}
            for agent in self.rows
        ]
        return pd.DataFrame(records, columns=["agent"] + [self.column_name(c) for c in self.columns])

    def to_dict(self) -> dict[str, dict[str, float]]:
        return {
            agent: {self.column_name(c): p for c, p in zip(self.columns, self.row(agent))}
            for agent in self.rows
        }

    def deviation_from(self, reference: Mapping[str, Sequence[Union[Fraction, float]]]) -> float:
        """Largest absolute difference from reference rows given in column order."""
        worst = 0.0
        for agent, expected in reference.items():
            if agent not in self.rows:
                raise AgentError(f"Table has no row for agent {agent!r}")
            for got, want in zip(self.row(agent), expected):
                worst = max(worst, abs(got - float(want)))
        return worst


def readout_columns(scenario: Scenario) -> tuple[tuple[str, ...], ...]:
    """Outcome combinations of the readout factors; pointers contribute only their outcome labels."""
    pointers = {m.rotation.pointer_factor: m.rotation.pointer_labels for m in scenario.measurements}
    label_lists = [
        pointers.get(fid, scenario.space.factor(fid).labels) for fid in scenario.readout
    ]
    return tuple(itertools.product(*label_lists))


def _readout(psi: StateVector, scenario: Scenario) -> Distribution:
    dist = marginal(born_weights(psi, scenario.spec), scenario.spec, scenario.readout)
    return {c: dist.get(c, 0.0) for c in readout_columns(scenario)}


def _check_branching(branching: str) -> None:
    if branching not in BRANCHING_MODES:
        raise AgentError(f"Unknown branching mode {branching!r} (expected one of {BRANCHING_MODES})")


def _branches(
    scenario: Scenario, agent: str, branching: str
) -> list[tuple[str, float, StateVector]]:
    """(outcome, probability, renormalized post-measurement pilot) for each possible outcome."""
    _check_branching(branching)
    try:
        m = scenario.measurement(agent)
    except ValueError as e:
        raise AgentError(str(e)) from e
    seg = m.segment
    pointer = m.rotation.pointer_factor
    schedule = scenario.schedule

    before = scenario.pilot_at(seg.t_start)
    after = propagate_pilot(schedule, before, seg.t_start, seg.t_end)

    if branching == "record":
        evolved = [
            propagate_pilot(schedule, comp.component, seg.t_start, seg.t_end)
            for comp in decompose(before, scenario.spec)
        ]
    else:
        evolved = [after]

    out = []
    for label in m.rotation.pointer_labels:
        prob = sum(project(psi, {pointer: label}).norm_sq() for psi in evolved)
        branch = project(after, {pointer: label})
        if prob < NUMERICS["branch_floor"] or branch.norm_sq() < NUMERICS["branch_floor"]:
            if prob >= NUMERICS["branch_floor"]:
                logger.warning(
                    f"{agent}: outcome {label} has probability {prob:.3e} but no coherent amplitude; dropped"
                )
            continue
        out.append((label, prob, branch.normalized()))
    return out


def outcome_probabilities(
    scenario: Scenario, agent: str, branching: str = SIMULATION_CONFIG["branching"]
) -> dict[str, float]:
    """The agent's distribution over its own outcomes, collapsing and mixing without further evolution."""
    return {label: prob for label, prob, _ in _branches(scenario, agent, branching)}


def agent_prediction(
    scenario: Scenario, agent: str, branching: str = SIMULATION_CONFIG["branching"]
) -> Distribution:
    """
    Collapse at the end of the agent's own measurement, evolve every branch
    unitarily to the end of the schedule, and mix the readout distributions
    with the branch probabilities.
    """
    if agent not in scenario.predicting_agents:
        raise AgentError(
            f"{agent!r} is not a predicting agent of {scenario.name!r} "
            f"(predicting agents: {list(scenario.predicting_agents)})"
        )
    branches = _branches(scenario, agent, branching)
    seg = scenario.measurement(agent).segment
    t_final = scenario.schedule.t_final
    mixed = {c: 0.0 for c in readout_columns(scenario)}
    for label, prob, branch in branches:
        final = propagate_pilot(scenario.schedule, branch, seg.t_end, t_final)
        for c, p in _readout(final, scenario).items():
            mixed[c] += prob * p
        logger.debug(f"{agent}: outcome {label} with probability {prob:.6f}")
    return mixed


def gods_eye_prediction(scenario: Scenario) -> Distribution:
    """Readout distribution of the fully unitary pilot at the end of the schedule."""
    return _readout(scenario.pilot_at(scenario.schedule.t_final), scenario)


def full_table(
    scenario: Scenario, branching: str = SIMULATION_CONFIG["branching"]
) -> PredictionTable:
    """One row per predicting agent, then the God's-eye row under the gods_eye_agent name."""
    _check_branching(branching)
    rows = {agent: agent_prediction(scenario, agent, branching) for agent in scenario.predicting_agents}
    rows[scenario.gods_eye_agent or "gods_eye"] = gods_eye_prediction(scenario)
    return PredictionTable(readout_columns(scenario), rows)


def row_sums(table: PredictionTable) -> dict[str, float]:
    """Total probability of each row."""
    return {agent: sum(table.row(agent)) for agent in table.rows}
