"""
The extended Wigner's friend experiment as a scenario: space, schedule,
initial state, hand-built reference states, and the implication checks run
on ensemble statistics.

Factors: F1, F2, A, W hold the agents' records (the beables), C is the coin
and S the electron spin. Measurements end at t = 0 (F1 reads C), t = 2
(F2 reads S), t = 3 (A reads F1C in the ok/fail basis) and t = 4 (W reads
F2S in the ok/fail basis); F1 prepares S at t = 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Mapping, Optional

import numpy as np

from bellsim.bell_dynamics import (
    EnsembleStats,
    HamiltonianSegment,
    PathView,
    Schedule,
    UnitaryEvent,
    propagate_pilot,
)
from bellsim.beables import BeableSpec, ViableComponent, decompose, sector_weights
from bellsim.measurement_models import (
    MeasurementRotation,
    Outcome,
    controlled_preparation,
    preparation_unitary,
    rotation_hamiltonian,
)
from bellsim.tensor_core import (
    StateVector,
    TensorSpace,
    basis_state,
    global_phase_distance,
    make_space,
    superpose,
)
from config import (
    EXPECTED_COMPONENT_COUNTS,
    PUBLISHED_REAL_WEIGHTS,
    SIMULATION_CONFIG,
    VERIFY_CONFIG,
)
from utils.data_loader import load_scenario_config, parse_amplitude, parse_system_vector

logger = logging.getLogger(__name__)


class ScenarioError(ValueError):
    """Raised when a scenario cannot be built or does not fit the requested check."""
    pass


class MissingCheckpointError(ScenarioError):
    """Raised when ensemble statistics lack a checkpoint the implication checks read."""
    pass


FR_FACTORS = (
    ("F1", ("0", "head", "tail")),
    ("F2", ("0", "+", "-")),
    ("A", ("0", "ok", "fail")),
    ("W", ("0", "ok", "fail")),
    ("C", ("head", "tail")),
    ("S", ("up", "down")),
)

FR_BEABLES = ("F1", "F2", "A", "W")

# Sector of the real state considered at t = k
REAL_SECTORS = {
    0: ("tail", "0", "0", "0"),
    1: ("tail", "0", "0", "0"),
    2: ("tail", "+", "0", "0"),
    3: ("tail", "+", "ok", "0"),
    4: ("tail", "-", "ok", "ok"),
}


# =============================================================================
# SCENARIO
# =============================================================================

@dataclass(frozen=True, eq=False)
class AgentMeasurement:
    agent: str
    rotation: MeasurementRotation
    segment: HamiltonianSegment


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    tau: float
    space: TensorSpace
    spec: BeableSpec
    schedule: Schedule
    initial_state: StateVector
    measurements: tuple[AgentMeasurement, ...]
    readout: tuple[str, ...]
    checkpoints: tuple[float, ...]
    predicting_agents: tuple[str, ...] = ()
    gods_eye_agent: Optional[str] = None
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def agents(self) -> tuple[str, ...]:
        return tuple(m.agent for m in self.measurements)

    def measurement(self, agent: str) -> AgentMeasurement:
        for m in self.measurements:
            if m.agent == agent:
                return m
        raise ScenarioError(f"Agent {agent!r} has no measurement in scenario {self.name!r}")

    def pilot_at(self, t: float) -> StateVector:
        return propagate_pilot(self.schedule, self.initial_state, self.schedule.t_initial, t)

    @property
    def is_frauchiger_renner(self) -> bool:
        return self.space == fr_space() and self.spec.beable_factors == FR_BEABLES


def _factor_vector(space: TensorSpace, factor_id: str, vector: Mapping[str, Any]) -> np.ndarray:
    f = space.factor(factor_id)
    out = np.zeros(f.dim, dtype=complex)
    for label, amp in vector.items():
        out[f.index(label)] += parse_amplitude(amp)
    return out


def scenario_from_config(cfg: Mapping[str, Any], tau: Optional[float] = None) -> Scenario:
    """Build a Scenario from a parsed scenario config; `tau` overrides the config's value."""
    tau = float(cfg.get("tau", SIMULATION_CONFIG["tau"]) if tau is None else tau)
    if not 0 < tau < 1:
        raise ScenarioError(f"tau must lie in (0, 1), got {tau}")
    try:
        space = make_space([(f["id"], f["labels"]) for f in cfg["factors"]])
        spec = BeableSpec(space, tuple(cfg["beables"]))
        initial = superpose([
            (parse_amplitude(term["amplitude"]), basis_state(space, term["labels"]))
            for term in cfg["initial_state"]
        ])

        measurements = []
        for m in cfg.get("measurements", []):
            if m.get("builder", "rotation") != "rotation":
                raise ScenarioError(f"Unknown measurement builder {m.get('builder')!r}")
            outcomes = tuple(
                Outcome.of(o["pointer"], parse_system_vector(o["vector"])) for o in m["outcomes"]
            )
            rotation = MeasurementRotation(
                tuple(m["system"]), m["pointer"], outcomes, tau, str(m.get("ready", "0"))
            )
            end = float(m["end"])
            segment = HamiltonianSegment(end - tau, end, rotation_hamiltonian(rotation, space), m["agent"])
            measurements.append(AgentMeasurement(m["agent"], rotation, segment))
        measurements.sort(key=lambda am: am.segment.t_start)

        events = []
        for e in cfg.get("events", []):
            if e.get("builder") != "controlled_preparation":
                raise ScenarioError(f"Unknown event builder {e.get('builder')!r}")
            source = _factor_vector(space, e["target"], e["source"])
            blocks = {
                label: preparation_unitary(source, _factor_vector(space, e["target"], vec))
                for label, vec in e["blocks"].items()
            }
            op = controlled_preparation(e["control"], blocks, e["target"], space, spec)
            events.append(UnitaryEvent(float(e["t"]), op, e.get("label", f"{e['control']} preparation")))
    except KeyError as e:
        raise ScenarioError(f"Scenario config is missing key {e}") from e

    if not initial.is_normalized():
        raise ScenarioError(f"Initial state has squared norm {initial.norm_sq():.12f}")

    segments = [m.segment for m in measurements]
    default_start = segments[0].t_start if segments else 0.0
    t_initial = float(cfg.get("t_initial", default_start))
    ends = [s.t_end for s in segments] + [e.t for e in events] + [t_initial]
    t_final = float(cfg.get("t_final", max(ends)))
    schedule = Schedule(tuple(segments), tuple(events), t_final, t_initial)

    return Scenario(
        name=str(cfg.get("name", "scenario")),
        tau=tau,
        space=space,
        spec=spec,
        schedule=schedule,
        initial_state=initial,
        measurements=tuple(measurements),
        readout=tuple(cfg.get("readout", spec.beable_factors)),
        checkpoints=tuple(float(c) for c in cfg.get("checkpoints", [t_final])),
        predicting_agents=tuple(cfg.get("predicting_agents", [])),
        gods_eye_agent=cfg.get("gods_eye_agent"),
        config=dict(cfg),
    )


def build_scenario(tau: float = SIMULATION_CONFIG["tau"]) -> Scenario:
    """The extended Wigner's friend scenario with measurement duration tau."""
    if not 0 < tau < 1:
        raise ScenarioError(f"tau must lie in (0, 1), got {tau}")
    return scenario_from_config(load_scenario_config("frauchiger-renner"), tau)


def fr_space() -> TensorSpace:
    """The six-factor space F1, F2, A, W, C, S."""
    return make_space(FR_FACTORS)


# =============================================================================
# REFERENCE STATES
# =============================================================================

# Kets as {sorted (factor, label) pairs: amplitude}, combined by _lin and _prod.
_Ket = dict[tuple[tuple[str, str], ...], complex]


def _ket(**labels: str) -> _Ket:
    return {tuple(sorted(labels.items())): 1.0}


def _lin(*terms: tuple[complex, _Ket]) -> _Ket:
    out: _Ket = {}
    for coeff, ket in terms:
        for k, v in ket.items():
            out[k] = out.get(k, 0.0) + coeff * v
    return out


def _prod(*kets: _Ket) -> _Ket:
    out: _Ket = {(): 1.0}
    for ket in kets:
        nxt: _Ket = {}
        for k1, a1 in out.items():
            for k2, a2 in ket.items():
                key = tuple(sorted(k1 + k2))
                nxt[key] = nxt.get(key, 0.0) + a1 * a2
        out = nxt
    return out


def _to_state(ket: _Ket, space: TensorSpace) -> StateVector:
    return superpose([(amp, basis_state(space, dict(key))) for key, amp in ket.items()])


def reference_pilot(k: int) -> StateVector:
    """The pilot after the k-th step of the protocol, written out by hand."""
    if k not in range(5):
        raise ValueError(f"k must be in 0..4, got {k}")
    r = math.sqrt
    head = _ket(F1="head", C="head")
    tail = _ket(F1="tail", C="tail")
    ok_f1c = _lin((r(1 / 2), head), (-r(1 / 2), tail))
    fail_f1c = _lin((r(1 / 2), head), (r(1 / 2), tail))
    up, down = _ket(S="up"), _ket(S="down")
    right = _lin((r(1 / 2), up), (r(1 / 2), down))
    plus = _prod(_ket(F2="+"), up)
    minus = _prod(_ket(F2="-"), down)
    ok_f2s = _lin((r(1 / 2), minus), (-r(1 / 2), plus))
    fail_f2s = _lin((r(1 / 2), minus), (r(1 / 2), plus))
    a_ok, a_fail, a_0 = _ket(A="ok"), _ket(A="fail"), _ket(A="0")
    w_ok, w_fail, w_0 = _ket(W="ok"), _ket(W="fail"), _ket(W="0")
    f2_0 = _ket(F2="0")

    if k == 0:
        ket = _prod(_lin((r(1 / 3), head), (r(2 / 3), tail)), up, f2_0, a_0, w_0)
    elif k == 1:
        ket = _prod(_lin((r(1 / 3), _prod(head, down)), (r(2 / 3), _prod(tail, right))), f2_0, a_0, w_0)
    elif k == 2:
        ket = _prod(
            _lin((r(1 / 3), _prod(head, minus)), (r(1 / 3), _prod(tail, plus)), (r(1 / 3), _prod(tail, minus))),
            a_0,
            w_0,
        )
    elif k == 3:
        ket = _prod(
            _lin(
                (r(1 / 6), _prod(_lin((-1.0, _prod(ok_f1c, a_ok)), (1.0, _prod(fail_f1c, a_fail))), plus)),
                (r(2 / 3), _prod(fail_f1c, a_fail, minus)),
            ),
            w_0,
        )
    else:
        ket = _lin(
            (r(1 / 12), _prod(_lin((1.0, _prod(ok_f1c, a_ok)), (1.0, _prod(fail_f1c, a_fail))), ok_f2s, w_ok)),
            (r(1 / 12), _prod(_lin((-1.0, _prod(ok_f1c, a_ok)), (3.0, _prod(fail_f1c, a_fail))), fail_f2s, w_fail)),
        )
    return _to_state(ket, fr_space())


def reference_real(k: int) -> ViableComponent:
    """
    The real-state component considered at t = k: the projection of the
    hand-built pilot onto its sector. At k = 4 this gives weight 1/48.
    """
    pilot = reference_pilot(k)
    spec = BeableSpec(pilot.space, FR_BEABLES)
    wanted = REAL_SECTORS[k]
    for comp in decompose(pilot, spec):
        if comp.sector.labels == wanted:
            return comp
    raise ScenarioError(f"Reference pilot {k} has no component in sector {','.join(wanted)}")


@dataclass
class StateCheck:
    k: int
    time: float
    pilot_error: float
    n_components: int
    expected_components: int
    real_sector: str
    real_weight: float
    stated_weight: Optional[Fraction]

    @property
    def discrepancy(self) -> Optional[float]:
        """Computed minus printed real-state weight, when a weight is printed."""
        if self.stated_weight is None:
            return None
        return self.real_weight - float(self.stated_weight)


@dataclass
class StateReport:
    tau: float
    tolerance: float
    checks: list[StateCheck]
    ok_ok_components: dict[str, float]

    @property
    def ok_ok_total(self) -> float:
        return sum(self.ok_ok_components.values())

    @property
    def passed(self) -> bool:
        return all(
            c.pilot_error <= self.tolerance and c.n_components == c.expected_components
            for c in self.checks
        )

    @property
    def discrepancies(self) -> list[int]:
        return [c.k for c in self.checks if c.discrepancy is not None and abs(c.discrepancy) > self.tolerance]

    def to_dict(self) -> dict[str, Any]:
        return {
            "tau": self.tau,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "checks": [
                {
                    "k": c.k,
                    "time": c.time,
                    "pilot_error": c.pilot_error,
                    "n_components": c.n_components,
                    "expected_components": c.expected_components,
                    "real_sector": c.real_sector,
                    "real_weight": c.real_weight,
                    "stated_weight": str(c.stated_weight) if c.stated_weight is not None else None,
                    "discrepancy": c.discrepancy,
                }
                for c in self.checks
            ],
            "ok_ok_components": dict(sorted(self.ok_ok_components.items())),
            "ok_ok_total": self.ok_ok_total,
            "discrepancies": self.discrepancies,
        }


def verify_reference_states(scenario: Scenario, tolerance: Optional[float] = None) -> StateReport:
    """Compare the evolved pilot at t = 0..4 with the hand-built references."""
    if not scenario.is_frauchiger_renner:
        raise ScenarioError(f"Reference states exist only for the extended Wigner's friend scenario, not {scenario.name!r}")
    tol = VERIFY_CONFIG["pilot_tol"] if tolerance is None else tolerance
    spec = scenario.spec
    checks = []
    pilot = scenario.initial_state
    for k in range(5):
        pilot = scenario.pilot_at(float(k))
        comps = decompose(pilot, spec)
        real_idx = spec.index_of(REAL_SECTORS[k])
        checks.append(StateCheck(
            k=k,
            time=float(k),
            pilot_error=global_phase_distance(pilot, reference_pilot(k)),
            n_components=len(comps),
            expected_components=EXPECTED_COMPONENT_COUNTS[k],
            real_sector=",".join(REAL_SECTORS[k]),
            real_weight=float(sector_weights(pilot, spec)[real_idx]),
            stated_weight=PUBLISHED_REAL_WEIGHTS.get(k),
        ))

    ok_ok = {
        c.sector.key: c.weight
        for c in decompose(pilot, spec)
        if c.sector["A"] == "ok" and c.sector["W"] == "ok"
    }
    report = StateReport(scenario.tau, tol, checks, ok_ok)
    for k in report.discrepancies:
        logger.info(f"Real-state weight at t={k} differs from the printed value")
    return report


# =============================================================================
# IMPLICATION CHECKS
# =============================================================================

def _at(t: int, **labels: str) -> Callable[[PathView], bool]:
    return lambda p: all(p[t][f] == v for f, v in labels.items())


def _chain(end: tuple[str, ...]) -> Callable[[PathView], bool]:
    sectors = dict(REAL_SECTORS)
    sectors[4] = end

    def predicate(p: PathView) -> bool:
        return all(
            tuple(p[k][f] for f in FR_BEABLES) == labels
            for k, labels in sectors.items()
            if k in p
        )
    return predicate


FR_JOINT_EVENTS: dict[str, Callable[[PathView], bool]] = {
    "r1_tail_w4_ok": lambda p: _at(1, F1="tail")(p) and _at(4, W="ok")(p),
    "r1_head_z2_plus": lambda p: _at(1, F1="head")(p) and _at(2, F2="+")(p),
    "z2_minus_x3_ok": lambda p: _at(2, F2="-")(p) and _at(3, A="ok")(p),
    "x3_ok_w4_ok": lambda p: _at(3, A="ok")(p) and _at(4, W="ok")(p),
    "x4_ok_w4_ok": _at(4, A="ok", W="ok"),
    "r4_tail_x4_ok_w4_ok": _at(4, F1="tail", A="ok", W="ok"),
    "real_chain": _chain(REAL_SECTORS[4]),
    "real_chain_plus_end": _chain(("tail", "+", "ok", "ok")),
    "r_flip_1_4": lambda p: p[1]["F1"] != p[4]["F1"],
    "r_flip_during_A": lambda p: p[2]["F1"] != p[3]["F1"],
    "z_flip_during_W": lambda p: p[3]["F2"] != p[4]["F2"],
}

REQUIRED_CHECKPOINTS = (1.0, 2.0, 3.0, 4.0)

# W reads F2S while F2 is itself a beable, so interference between the F2
# ready sectors gives W's completed records positive rates back to W = 0.
NO_REVERSE_AGENTS = ("F1", "F2", "A")


@dataclass
class ImplicationReport:
    n_runs: int
    counts: dict[str, int]
    head_tail_jumps_f2: int
    reverse_jumps: dict[str, int]
    real_state_exits_w: int
    starvation_events: int

    def frequency(self, name: str) -> float:
        return self.counts[name] / self.n_runs

    @property
    def tail_implies_fail_refuted(self) -> bool:
        """r(1) = tail => w(4) = fail fails on some run."""
        return self.counts["r1_tail_w4_ok"] > 0

    @property
    def ok_implies_head_refuted(self) -> bool:
        """w(4) = ok => r(1) = head; the contrapositive of the above."""
        return self.counts["r1_tail_w4_ok"] > 0

    @property
    def head_implies_minus_holds(self) -> bool:
        """r(1) = head => z(2) = -."""
        return self.counts["r1_head_z2_plus"] == 0

    @property
    def minus_implies_fail_holds(self) -> bool:
        """z(2) = - => x(3) = fail."""
        return self.counts["z2_minus_x3_ok"] == 0

    @property
    def ok_ok_witnessed(self) -> bool:
        """x(3) = w(4) = ok occurs."""
        return self.counts["x3_ok_w4_ok"] > 0

    @property
    def real_state_kept_by_w(self) -> bool:
        """No run leaves (tail,-,ok,ok) while W measures."""
        return self.real_state_exits_w == 0

    @property
    def structure_ok(self) -> bool:
        return (
            self.head_tail_jumps_f2 == 0
            and self.real_state_kept_by_w
            and not any(self.reverse_jumps.get(agent, 0) for agent in NO_REVERSE_AGENTS)
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_runs": self.n_runs,
            "counts": dict(sorted(self.counts.items())),
            "frequencies": {k: self.frequency(k) for k in sorted(self.counts)},
            "tail_implies_fail_refuted": self.tail_implies_fail_refuted,
            "ok_implies_head_refuted": self.ok_implies_head_refuted,
            "head_implies_minus_holds": self.head_implies_minus_holds,
            "minus_implies_fail_holds": self.minus_implies_fail_holds,
            "ok_ok_witnessed": self.ok_ok_witnessed,
            "head_tail_jumps_f2": self.head_tail_jumps_f2,
            "reverse_jumps": dict(sorted(self.reverse_jumps.items())),
            "real_state_exits_w": self.real_state_exits_w,
            "real_state_kept_by_w": self.real_state_kept_by_w,
            "starvation_events": self.starvation_events,
            "structure_ok": self.structure_ok,
        }


def check_claims(stats: EnsembleStats) -> ImplicationReport:
    """Evaluate the implication chain and the transition-structure claims on an ensemble."""
    for t in REQUIRED_CHECKPOINTS:
        try:
            stats.checkpoint_index(t)
        except KeyError:
            raise MissingCheckpointError(
                f"Statistics need checkpoints at {list(REQUIRED_CHECKPOINTS)}, have {list(stats.checkpoints)}"
            )
    if tuple(stats.beable_factors) != FR_BEABLES:
        raise ScenarioError(f"Statistics are over beables {list(stats.beable_factors)}, expected {list(FR_BEABLES)}")

    counts = {name: stats.count(pred) for name, pred in FR_JOINT_EVENTS.items()}

    head_tail = 0
    exits_w = 0
    reverse: dict[str, int] = {}
    f1 = FR_BEABLES.index("F1")
    for (segment, s, d), n in stats.jump_counts.items():
        src, dst = stats.sector_labels[s], stats.sector_labels[d]
        if segment == "F2" and {src[f1], dst[f1]} == {"head", "tail"}:
            head_tail += n
        if segment in FR_BEABLES:
            pos = FR_BEABLES.index(segment)
            reverse.setdefault(segment, 0)
            if src[pos] != "0" and dst[pos] == "0":
                reverse[segment] += n
        if segment == "W" and src == REAL_SECTORS[4]:
            exits_w += n

    return ImplicationReport(
        n_runs=stats.n_runs,
        counts=counts,
        head_tail_jumps_f2=head_tail,
        reverse_jumps=reverse,
        real_state_exits_w=exits_w,
        starvation_events=stats.starvation_events,
    )
