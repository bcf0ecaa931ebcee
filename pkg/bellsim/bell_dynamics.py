"""
Bell's jump process among viable subspaces, driven by a unitarily evolving
pilot vector.

The rate from sector i to sector j is

    w_ij = max(0, 2 Im <psi_j|H|psi_i>) / <psi_i|psi_i>

where psi_i is the component of the pilot in sector i. Every consumer of the
rates (single trajectories, ensembles, the master equation) reads them from
one RateTable, so all of them share the same adaptive time grid.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
from joblib import Parallel, delayed

from bellsim.beables import BeableSpec, Sector, sector_weights
from bellsim.tensor_core import (
    NonHermitianError,
    Operator,
    Propagator,
    StateVector,
    is_unitary,
)
from config import NUMERICS, SIMULATION_CONFIG

logger = logging.getLogger(__name__)


class ScheduleError(ValueError):
    """Raised when segments or events of a schedule are inconsistent."""
    pass


class StarvedSectorError(RuntimeError):
    """Raised when rates are requested out of a sector whose pilot weight is below the floor."""
    pass


class StepSizeError(RuntimeError):
    """Raised when a step would give a one-step jump probability above the guard."""
    pass


class MasterEquationError(RuntimeError):
    """Raised when the integrated distribution stops summing to one."""
    pass


# =============================================================================
# SCHEDULE
# =============================================================================

@dataclass(frozen=True, eq=False)
class HamiltonianSegment:
    t_start: float
    t_end: float
    hamiltonian: Operator
    label: str = ""

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @cached_property
    def propagator(self) -> Propagator:
        return Propagator(self.hamiltonian)


@dataclass(frozen=True, eq=False)
class UnitaryEvent:
    t: float
    unitary: Operator
    label: str = ""
    inside_segment_ok: bool = False


@dataclass(frozen=True, eq=False)
class Schedule:
    segments: tuple[HamiltonianSegment, ...]
    events: tuple[UnitaryEvent, ...]
    t_final: float
    t_initial: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "events", tuple(sorted(self.events, key=lambda e: e.t)))
        self._validate()

    def _validate(self) -> None:
        if self.t_final < self.t_initial:
            raise ScheduleError(f"t_final {self.t_final} precedes t_initial {self.t_initial}")
        spaces = [s.hamiltonian.space for s in self.segments] + [e.unitary.space for e in self.events]
        if any(sp != spaces[0] for sp in spaces[1:]):
            raise ScheduleError("Segments and events must share one tensor space")

        prev_end = self.t_initial
        for seg in self.segments:
            if not seg.t_start < seg.t_end:
                raise ScheduleError(f"Segment {seg.label!r} has empty interval [{seg.t_start}, {seg.t_end}]")
            if seg.t_start < prev_end:
                raise ScheduleError(f"Segment {seg.label!r} starts at {seg.t_start}, before {prev_end}")
            if not seg.hamiltonian.hermitian:
                raise NonHermitianError(f"Segment {seg.label!r} Hamiltonian is not flagged Hermitian")
            prev_end = seg.t_end
        if prev_end > self.t_final:
            raise ScheduleError(f"Last segment ends at {prev_end}, after t_final {self.t_final}")

        for ev in self.events:
            if not self.t_initial < ev.t <= self.t_final:
                raise ScheduleError(f"Event {ev.label!r} at t={ev.t} outside ({self.t_initial}, {self.t_final}]")
            if not is_unitary(ev.unitary):
                raise ScheduleError(f"Event {ev.label!r} is not unitary")
            inside = any(s.t_start < ev.t < s.t_end for s in self.segments)
            if inside and not ev.inside_segment_ok:
                raise ScheduleError(f"Event {ev.label!r} at t={ev.t} falls inside a segment")

    @property
    def space(self):
        if self.segments:
            return self.segments[0].hamiltonian.space
        if self.events:
            return self.events[0].unitary.space
        return None

    def events_between(self, t_from: float, t_to: float) -> list[UnitaryEvent]:
        """Events with t_from < t <= t_to."""
        return [e for e in self.events if t_from < e.t <= t_to]

    def segment(self, label: str) -> HamiltonianSegment:
        for seg in self.segments:
            if seg.label == label:
                return seg
        raise ScheduleError(f"No segment labelled {label!r}")


def propagate_pilot(schedule: Schedule, pilot: StateVector, t_from: float, t_to: float) -> StateVector:
    """
    Evolve the pilot from t_from to t_to through every segment overlap and
    every event with t_from < t <= t_to.
    """
    if t_to < t_from:
        raise ScheduleError(f"Cannot propagate backwards from {t_from} to {t_to}")
    if t_from < schedule.t_initial or t_to > schedule.t_final:
        raise ScheduleError(
            f"Interval [{t_from}, {t_to}] outside schedule [{schedule.t_initial}, {schedule.t_final}]"
        )
    amps = pilot.amplitudes
    events = schedule.events_between(t_from, t_to)
    cuts = [t_from] + [e.t for e in events] + [t_to]
    for i in range(len(cuts) - 1):
        a, b = cuts[i], cuts[i + 1]
        for seg in schedule.segments:
            lo, hi = max(a, seg.t_start), min(b, seg.t_end)
            if hi > lo:
                amps = seg.propagator.evolve(amps, hi - lo)
        if i < len(events):
            amps = events[i].unitary.entries @ amps
    return StateVector(pilot.space, amps)


# =============================================================================
# RATES
# =============================================================================

@dataclass(frozen=True)
class StepPolicy:
    dt_divisor: int = SIMULATION_CONFIG["dt_divisor"]
    max_step_rate: float = SIMULATION_CONFIG["max_step_rate"]
    jump_guard: float = SIMULATION_CONFIG["jump_guard"]
    max_halvings: int = SIMULATION_CONFIG["max_halvings"]
    weight_floor: float = NUMERICS["weight_floor"]
    starvation_fraction: float = SIMULATION_CONFIG["starvation_fraction"]

    def __post_init__(self) -> None:
        if self.dt_divisor < 1:
            raise ValueError(f"dt_divisor must be positive, got {self.dt_divisor}")
        if not 0 < self.max_step_rate < 1:
            raise ValueError(f"max_step_rate must be in (0, 1), got {self.max_step_rate}")

    def starvation_limit(self, n_runs: int) -> int:
        """Forced jumps tolerated over n_runs trajectories before a warning."""
        return max(1, int(self.starvation_fraction * n_runs))


@dataclass(eq=False)
class SectorCoupling:
    """The matrix elements of H that connect different sectors."""

    hamiltonian: Operator
    spec: BeableSpec

    def __post_init__(self) -> None:
        h = self.hamiltonian.entries
        sec = self.spec.sector_of_index
        rows, cols = np.nonzero(np.abs(h) > NUMERICS["matrix_floor"])
        cross = sec[rows] != sec[cols]
        self.rows = rows[cross]
        self.cols = cols[cross]
        self.values = h[self.rows, self.cols]
        n = self.spec.n_sectors
        self.src = sec[self.cols]
        self.dst = sec[self.rows]
        self.pair_index = self.src * n + self.dst
        self.adjacency = np.zeros((n, n), dtype=bool)
        self.adjacency[self.src, self.dst] = True

    def flux(self, amps: np.ndarray) -> np.ndarray:
        """F[i, j] = 2 Im <psi_j|H|psi_i>; antisymmetric."""
        n = self.spec.n_sectors
        f = 2.0 * np.imag(np.conj(amps[self.rows]) * self.values * amps[self.cols])
        return np.bincount(self.pair_index, weights=f, minlength=n * n).reshape(n, n)

    def positive_flux(self, amps: np.ndarray) -> np.ndarray:
        f = self.flux(amps)
        f[f < NUMERICS["flux_floor"]] = 0.0
        return f


def starvation_targets(
    coupling: SectorCoupling,
    flux_row: np.ndarray,
    weights: np.ndarray,
    source: int,
    floor: float,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Where a starved sector jumps: proportional to its positive outgoing flux,
    else to the Born weights of sectors H couples it to, else to the Born
    weights of every live sector.
    """
    targets = np.flatnonzero(flux_row > 0)
    if targets.size:
        return targets, flux_row[targets] / flux_row[targets].sum()
    live = weights >= floor
    live[source] = False
    coupled = (coupling.adjacency[source] | coupling.adjacency[:, source]) & live
    pick = coupled if np.any(coupled) else live
    targets = np.flatnonzero(pick)
    if not targets.size:
        raise StarvedSectorError("No sector carries pilot weight above the floor")
    return targets, weights[targets] / weights[targets].sum()


def jump_rates(
    h: Operator,
    pilot: StateVector,
    spec: BeableSpec,
    current: Sector,
    floor: Optional[float] = None,
) -> dict[Sector, float]:
    """Positive jump rates out of `current`; zero-rate targets are omitted."""
    floor = NUMERICS["weight_floor"] if floor is None else floor
    weights = sector_weights(pilot, spec)
    i = spec.index_of(current)
    if weights[i] < floor:
        raise StarvedSectorError(f"Sector {current} has pilot weight {weights[i]:.3e} below {floor:.0e}")
    flux = SectorCoupling(h, spec).positive_flux(pilot.amplitudes)[i]
    return {spec.sector(int(j)): float(flux[j] / weights[i]) for j in np.flatnonzero(flux > 0)}


def step(
    pilot: StateVector,
    current: Sector,
    h: Operator,
    spec: BeableSpec,
    dt: float,
    rng: np.random.Generator,
    policy: Optional[StepPolicy] = None,
) -> Sector:
    """
    One step of the jump process: jump to j with probability
    (w_j / W) (1 - exp(-W dt)). A starved current sector always jumps.
    """
    policy = policy or StepPolicy()
    coupling = SectorCoupling(h, spec)
    weights = sector_weights(pilot, spec)
    flux = coupling.positive_flux(pilot.amplitudes)
    i = spec.index_of(current)

    if weights[i] < policy.weight_floor:
        targets, probs = starvation_targets(coupling, flux[i], weights, i, policy.weight_floor)
        logger.debug(f"Starved sector {current}; forcing a jump")
        return spec.sector(int(_pick(targets, probs, rng)))

    rates = flux[i] / weights[i]
    total = float(rates.sum())
    if total == 0.0:
        return current
    p_jump = -math.expm1(-total * dt)
    if p_jump > policy.jump_guard:
        raise StepSizeError(f"One-step jump probability {p_jump:.3f} exceeds {policy.jump_guard}")
    if rng.random() >= p_jump:
        return current
    targets = np.flatnonzero(rates > 0)
    return spec.sector(int(_pick(targets, rates[targets], rng)))


def _pick(targets: np.ndarray, weights: np.ndarray, rng: np.random.Generator) -> int:
    cum = np.cumsum(weights)
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return int(targets[min(idx, len(targets) - 1)])


# =============================================================================
# RATE TABLE
# =============================================================================

@dataclass(eq=False)
class RateTable:
    """
    Jump rates of every sector on the shared adaptive grid of a schedule.

    Step k covers [t0[k], t1[k]]; its rates are evaluated on the pilot at the
    step midpoint and a jump sampled in step k takes effect at t1[k].
    """

    spec: BeableSpec
    policy: StepPolicy
    t_initial: float
    t_final: float
    segment_labels: tuple[str, ...]
    t0: np.ndarray
    t1: np.ndarray
    segment: np.ndarray
    offsets: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    rate: np.ndarray
    forced_offsets: np.ndarray
    forced_src: np.ndarray
    forced_dst: np.ndarray
    forced_prob: np.ndarray
    cum_hazard: np.ndarray
    born_initial: np.ndarray
    born_end: np.ndarray
    initial_support: np.ndarray
    support: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.t0)

    @cached_property
    def forced_steps(self) -> list[np.ndarray]:
        out = []
        step_of = np.repeat(np.arange(self.n_steps), np.diff(self.forced_offsets))
        for s in range(self.spec.n_sectors):
            out.append(np.unique(step_of[self.forced_src == s]))
        return out

    def grid_times(self) -> np.ndarray:
        return np.concatenate([[self.t_initial], self.t1])

    def grid_born(self) -> np.ndarray:
        return np.vstack([self.born_initial[None, :], self.born_end])

    def regular_row(self, k: int, source: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.offsets[k], self.offsets[k + 1]
        mask = self.src[lo:hi] == source
        return self.dst[lo:hi][mask], self.rate[lo:hi][mask]

    def forced_row(self, k: int, source: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.forced_offsets[k], self.forced_offsets[k + 1]
        mask = self.forced_src[lo:hi] == source
        return self.forced_dst[lo:hi][mask], self.forced_prob[lo:hi][mask]

    def next_forced(self, source: int, k: int) -> int:
        steps = self.forced_steps[source]
        i = int(np.searchsorted(steps, k, side="left"))
        return int(steps[i]) if i < len(steps) else self.n_steps


class _TableBuilder:
    def __init__(self, n_sectors: int):
        self.n = n_sectors
        self.t0: list[float] = []
        self.t1: list[float] = []
        self.segment: list[int] = []
        self.counts: list[int] = []
        self.src: list[np.ndarray] = []
        self.dst: list[np.ndarray] = []
        self.rate: list[np.ndarray] = []
        self.forced_counts: list[int] = []
        self.forced_src: list[int] = []
        self.forced_dst: list[int] = []
        self.forced_prob: list[float] = []
        self.hazard: list[np.ndarray] = []
        self.born_end: list[np.ndarray] = []


def tabulate_rates(
    schedule: Schedule,
    initial_pilot: StateVector,
    spec: BeableSpec,
    policy: Optional[StepPolicy] = None,
    support: Optional[np.ndarray] = None,
) -> RateTable:
    """
    Walk the schedule on an adaptive grid and tabulate the rates.

    Each segment starts from a base step of duration / dt_divisor. A step is
    halved while any sector above the weight floor has total rate * dt above
    max_step_rate. Forced (starvation) rows are kept for starved sectors the
    process can occupy, tracked from `support` (default: sectors with nonzero
    initial Born weight).
    """
    policy = policy or StepPolicy()
    n = spec.n_sectors
    floor = policy.weight_floor
    amps = initial_pilot.amplitudes
    born_initial = sector_weights(initial_pilot, spec)
    initial_support = born_initial >= NUMERICS["zero_weight"]
    if support is not None:
        initial_support = initial_support | np.asarray(support, dtype=bool)
    possible = initial_support.copy()
    b = _TableBuilder(n)

    cursor = schedule.t_initial
    for seg_idx, seg in enumerate(schedule.segments):
        amps = _apply_events(schedule, spec, amps, cursor, seg.t_start)
        inside = [e for e in schedule.events if seg.t_start < e.t < seg.t_end]
        cuts = [seg.t_start] + [e.t for e in inside] + [seg.t_end]
        coupling = SectorCoupling(seg.hamiltonian, spec)
        base = seg.duration / policy.dt_divisor
        for p in range(len(cuts) - 1):
            amps = _walk_piece(b, seg, seg_idx, coupling, amps, cuts[p], cuts[p + 1], base, policy, possible)
            if p < len(inside):
                amps = _apply_event(spec, inside[p], amps)
        cursor = seg.t_end
    logger.debug(f"Tabulated {len(b.t0)} steps over {len(schedule.segments)} segments")

    n_steps = len(b.t0)
    hazard = np.vstack(b.hazard) if n_steps else np.zeros((0, n))
    cum_hazard = np.zeros((n, n_steps + 1))
    if n_steps:
        cum_hazard[:, 1:] = np.cumsum(hazard, axis=0).T

    return RateTable(
        spec=spec,
        policy=policy,
        t_initial=schedule.t_initial,
        t_final=schedule.t_final,
        segment_labels=tuple(s.label for s in schedule.segments),
        t0=np.array(b.t0, dtype=float),
        t1=np.array(b.t1, dtype=float),
        segment=np.array(b.segment, dtype=int),
        offsets=np.concatenate([[0], np.cumsum(b.counts, dtype=int)]).astype(int),
        src=np.concatenate(b.src).astype(int) if b.src else np.zeros(0, dtype=int),
        dst=np.concatenate(b.dst).astype(int) if b.dst else np.zeros(0, dtype=int),
        rate=np.concatenate(b.rate) if b.rate else np.zeros(0),
        forced_offsets=np.concatenate([[0], np.cumsum(b.forced_counts, dtype=int)]).astype(int),
        forced_src=np.array(b.forced_src, dtype=int),
        forced_dst=np.array(b.forced_dst, dtype=int),
        forced_prob=np.array(b.forced_prob, dtype=float),
        cum_hazard=cum_hazard,
        born_initial=born_initial,
        born_end=np.vstack(b.born_end) if n_steps else np.zeros((0, n)),
        initial_support=initial_support,
        support=possible,
    )


def _weights_of(amps: np.ndarray, spec: BeableSpec) -> np.ndarray:
    return np.bincount(spec.sector_of_index, weights=np.abs(amps) ** 2, minlength=spec.n_sectors)


def _walk_piece(
    b: _TableBuilder,
    seg: HamiltonianSegment,
    seg_idx: int,
    coupling: SectorCoupling,
    amps: np.ndarray,
    start: float,
    end: float,
    base: float,
    policy: StepPolicy,
    possible: np.ndarray,
) -> np.ndarray:
    """Tabulate steps over [start, end] of one segment; returns the pilot at `end`."""
    spec = coupling.spec
    floor = policy.weight_floor
    prop = seg.propagator
    coeffs = prop.coefficients(amps)
    t = start
    trial = base
    while t < end:
        dt = min(trial, base, end - t)
        for halving in range(policy.max_halvings + 1):
            mid = prop.states_at(coeffs, (t - start) + dt / 2)
            w_mid = _weights_of(mid, spec)
            flux = coupling.positive_flux(mid)
            alive = w_mid >= floor
            total = np.zeros(spec.n_sectors)
            total[alive] = flux[alive].sum(axis=1) / w_mid[alive]
            if total.max() * dt <= policy.max_step_rate or halving == policy.max_halvings:
                break
            dt /= 2
        p_jump = -math.expm1(-float(total.max()) * dt)
        if p_jump > policy.jump_guard:
            raise StepSizeError(
                f"Step at t={t:.6f} in segment {seg.label!r} has jump probability {p_jump:.3f}"
            )
        t_next = end if dt >= end - t else t + dt
        if t_next <= t:
            raise StepSizeError(f"Step size underflow at t={t!r} in segment {seg.label!r}")

        s_idx, d_idx = np.nonzero((flux > 0) & alive[:, None])
        b.t0.append(t)
        b.t1.append(t_next)
        b.segment.append(seg_idx)
        b.counts.append(len(s_idx))
        b.src.append(s_idx)
        b.dst.append(d_idx)
        b.rate.append(flux[s_idx, d_idx] / w_mid[s_idx])
        b.hazard.append(total * dt)

        # A starved sector is emptied by its forced row and stays possible
        # only if something jumps back into it.
        reached = d_idx[possible[s_idx]]
        starved = np.flatnonzero(possible & ~alive)
        possible[starved] = False
        n_forced = 0
        for s in starved:
            targets, probs = starvation_targets(coupling, flux[s], w_mid, int(s), floor)
            b.forced_src.extend([int(s)] * len(targets))
            b.forced_dst.extend(int(x) for x in targets)
            b.forced_prob.extend(float(x) for x in probs)
            n_forced += len(targets)
            possible[targets] = True
        b.forced_counts.append(n_forced)
        possible[reached] = True

        b.born_end.append(_weights_of(prop.states_at(coeffs, t_next - start), spec))
        t = t_next
        trial = 2 * dt
    return prop.states_at(coeffs, end - start)


def _apply_event(spec: BeableSpec, event: UnitaryEvent, amps: np.ndarray) -> np.ndarray:
    before = _weights_of(amps, spec)
    out = event.unitary.entries @ amps
    drift = float(np.max(np.abs(_weights_of(out, spec) - before)))
    if drift > NUMERICS["norm_tol"]:
        raise ScheduleError(f"Event {event.label!r} changes sector weights by {drift:.3e}")
    return out


def _apply_events(schedule: Schedule, spec: BeableSpec, amps: np.ndarray, t_from: float, t_to: float) -> np.ndarray:
    for ev in schedule.events_between(t_from, t_to):
        amps = _apply_event(spec, ev, amps)
    return amps


# =============================================================================
# TRAJECTORIES
# =============================================================================

@dataclass(frozen=True)
class Jump:
    time: float
    source: Sector
    target: Sector
    forced: bool = False
    segment: str = ""


@dataclass(frozen=True)
class Trajectory:
    initial_sector: Sector
    jumps: tuple[Jump, ...]
    t_initial: float
    t_final: float

    def sector_at(self, t: float) -> Sector:
        """Sector at time t; a jump at time t is already in effect."""
        if not self.t_initial <= t <= self.t_final:
            raise ValueError(f"t={t} outside [{self.t_initial}, {self.t_final}]")
        current = self.initial_sector
        for j in self.jumps:
            if j.time > t:
                break
            current = j.target
        return current

    @property
    def final_sector(self) -> Sector:
        return self.jumps[-1].target if self.jumps else self.initial_sector

    @property
    def starvation_events(self) -> int:
        return sum(1 for j in self.jumps if j.forced)


RawJump = tuple[int, int, int, bool]


def _sample_path(table: RateTable, start: int, rng: np.random.Generator) -> list[RawJump]:
    """
    Sample one path on the table by inverting each sector's cumulative hazard.

    Returns (step, source, target, forced) tuples; the jump takes effect at t1[step].
    """
    path: list[RawJump] = []
    s = start
    k = 0
    n_steps = table.n_steps
    while k < n_steps:
        h = table.cum_hazard[s]
        target = h[k] + rng.exponential()
        m = max(int(np.searchsorted(h, target, side="left")) - 1, k)
        if m >= n_steps or h[m + 1] < target:
            m = n_steps
        f = table.next_forced(s, k)
        if f < m:
            dst, prob = table.forced_row(f, s)
            d = _pick(dst, prob, rng)
            path.append((f, s, d, True))
            s, k = d, f + 1
        elif m < n_steps:
            dst, rate = table.regular_row(m, s)
            if not dst.size:
                raise StepSizeError(f"Hazard increased at step {m} but sector {s} has no targets")
            d = _pick(dst, rate, rng)
            path.append((m, s, d, False))
            s, k = d, m + 1
        else:
            break
    return path


def sample_initial_sector(table: RateTable, rng: np.random.Generator) -> int:
    w = np.where(table.born_initial >= NUMERICS["zero_weight"], table.born_initial, 0.0)
    return _pick(np.arange(len(w)), w, rng)


def trajectory_rngs(seed: int, index: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (initial sector, dynamics) generators of trajectory `index`."""
    return (
        np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, 0))),
        np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, 1))),
    )


def _to_trajectory(table: RateTable, start: int, path: Sequence[RawJump]) -> Trajectory:
    spec = table.spec
    jumps = tuple(
        Jump(
            time=float(table.t1[k]),
            source=spec.sector(s),
            target=spec.sector(d),
            forced=forced,
            segment=table.segment_labels[table.segment[k]],
        )
        for k, s, d, forced in path
    )
    return Trajectory(spec.sector(start), jumps, table.t_initial, table.t_final)


def simulate_trajectory(
    schedule: Schedule,
    initial_pilot: StateVector,
    initial_sector: Sector,
    spec: BeableSpec,
    policy: Optional[StepPolicy] = None,
    rng: Optional[np.random.Generator] = None,
    table: Optional[RateTable] = None,
) -> Trajectory:
    """Simulate the real sector from t_initial to t_final."""
    policy = policy or StepPolicy()
    rng = rng if rng is not None else np.random.default_rng()
    start = spec.index_of(initial_sector)
    if table is None:
        table = tabulate_rates(schedule, initial_pilot, spec, policy)
    if table.born_initial[start] < NUMERICS["zero_weight"] or not table.initial_support[start]:
        raise ValueError(f"Initial sector {initial_sector} has no pilot weight")
    traj = _to_trajectory(table, start, _sample_path(table, start, rng))
    if traj.starvation_events > policy.starvation_limit(1):
        logger.warning(f"Trajectory needed {traj.starvation_events} forced jumps")
    return traj


# =============================================================================
# MASTER EQUATION
# =============================================================================

@dataclass(frozen=True, eq=False)
class MasterEquationResult:
    spec: BeableSpec
    times: np.ndarray
    distributions: np.ndarray
    born: np.ndarray

    def _index(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        if i < 0:
            raise ValueError(f"t={t} precedes the first grid time {self.times[0]}")
        return i

    def at(self, t: float) -> np.ndarray:
        return self.distributions[self._index(t)]

    def born_at(self, t: float) -> np.ndarray:
        return self.born[self._index(t)]

    def max_deviation(self) -> tuple[float, float, Sector]:
        """Largest |p - Born| over the grid: (deviation, time, sector)."""
        dev = np.abs(self.distributions - self.born)
        k, s = np.unravel_index(int(np.argmax(dev)), dev.shape)
        return float(dev[k, s]), float(self.times[k]), self.spec.sector(int(s))


def integrate_master_equation(
    schedule: Schedule,
    initial_pilot: StateVector,
    initial_distribution: Union[np.ndarray, Mapping[Sector, float]],
    spec: BeableSpec,
    policy: Optional[StepPolicy] = None,
    table: Optional[RateTable] = None,
) -> MasterEquationResult:
    """
    Evolve a sector distribution with the one-step transition law of the
    simulator on the same grid:
    stay with exp(-W dt), move to j with (w_j / W)(1 - exp(-W dt)).
    """
    if isinstance(initial_distribution, Mapping):
        p = np.array([initial_distribution.get(s, 0.0) for s in spec.all_sectors], dtype=float)
    else:
        p = np.array(initial_distribution, dtype=float)
    if p.shape != (spec.n_sectors,) or np.any(p < 0):
        raise ValueError("Initial distribution must be a non-negative vector over all sectors")
    if abs(p.sum() - 1.0) > NUMERICS["norm_tol"]:
        raise ValueError(f"Initial distribution sums to {p.sum():.12f}, not 1")

    if table is None:
        table = tabulate_rates(schedule, initial_pilot, spec, policy, support=p > 0)
    elif np.any((p > 0) & ~table.initial_support):
        raise ValueError("Initial distribution has mass outside the rate table's support")

    drift_tol = NUMERICS["drift_tol"]
    out = np.empty((table.n_steps + 1, spec.n_sectors))
    out[0] = p
    hazard = np.diff(table.cum_hazard, axis=1)
    dt = table.t1 - table.t0
    for k in range(table.n_steps):
        hz = hazard[:, k]
        new = p * np.exp(-hz)
        lo, hi = table.offsets[k], table.offsets[k + 1]
        if hi > lo:
            src, dst, rate = table.src[lo:hi], table.dst[lo:hi], table.rate[lo:hi]
            frac = rate * dt[k] / hz[src] * -np.expm1(-hz[src])
            np.add.at(new, dst, p[src] * frac)
        flo, fhi = table.forced_offsets[k], table.forced_offsets[k + 1]
        if fhi > flo:
            fsrc, fdst, fprob = table.forced_src[flo:fhi], table.forced_dst[flo:fhi], table.forced_prob[flo:fhi]
            moved = p[fsrc] * fprob
            new[np.unique(fsrc)] -= p[np.unique(fsrc)]
            np.add.at(new, fdst, moved)
        p = new
        drift = abs(p.sum() - 1.0)
        if drift > drift_tol:
            logger.error(f"Master equation drift {drift:.3e} at t={table.t1[k]:.6f}")
            raise MasterEquationError(f"Distribution drift {drift:.3e} exceeds {drift_tol:.0e}")
        out[k + 1] = p

    return MasterEquationResult(spec, table.grid_times(), out, table.grid_born())


def compare_to_born(
    result: MasterEquationResult,
    schedule: Schedule,
    initial_pilot: StateVector,
    checkpoints: Sequence[float],
) -> list[dict]:
    """Deviation of the master-equation distribution from the pilot Born weights at each checkpoint."""
    rows = []
    spec = result.spec
    for c in checkpoints:
        pilot = propagate_pilot(schedule, initial_pilot, schedule.t_initial, c)
        born = sector_weights(pilot, spec)
        dev = np.abs(result.at(c) - born)
        worst = int(np.argmax(dev))
        rows.append({
            "checkpoint": float(c),
            "max_deviation": float(dev[worst]),
            "worst_sector": spec.sector(worst).key,
            "probability": float(result.at(c)[worst]),
            "born": float(born[worst]),
        })
    return rows


# =============================================================================
# ENSEMBLES
# =============================================================================

PathView = dict[float, dict[str, str]]


@dataclass
class EnsembleStats:
    n_runs: int
    seed: int
    checkpoints: tuple[float, ...]
    beable_factors: tuple[str, ...]
    sector_labels: tuple[tuple[str, ...], ...]
    path_counts: Counter = field(default_factory=Counter)
    jump_counts: Counter = field(default_factory=Counter)
    starvation_events: int = 0
    jumps_after_final_checkpoint: int = 0
    joint_counts: dict[str, int] = field(default_factory=dict)
    trajectories: list[Trajectory] = field(default_factory=list, compare=False)

    def sector_key(self, index: int) -> str:
        return ",".join(self.sector_labels[index])

    def checkpoint_index(self, t: float) -> int:
        for i, c in enumerate(self.checkpoints):
            if math.isclose(c, t, abs_tol=1e-12):
                return i
        raise KeyError(f"No checkpoint at t={t}")

    def frequency_array(self, t: float) -> np.ndarray:
        i = self.checkpoint_index(t)
        counts = np.zeros(len(self.sector_labels))
        for path, c in self.path_counts.items():
            counts[path[i]] += c
        return counts / self.n_runs

    def frequencies(self, t: float) -> dict[str, float]:
        """Observed sectors at checkpoint t and their frequencies."""
        arr = self.frequency_array(t)
        return {self.sector_key(s): float(arr[s]) for s in np.flatnonzero(arr)}

    def marginal_frequencies(self, t: float, factor_ids: Sequence[str]) -> dict[tuple[str, ...], float]:
        i = self.checkpoint_index(t)
        pos = [self.beable_factors.index(f) for f in factor_ids]
        out: Counter = Counter()
        for path, c in self.path_counts.items():
            labels = self.sector_labels[path[i]]
            out[tuple(labels[p] for p in pos)] += c
        return {k: v / self.n_runs for k, v in sorted(out.items())}

    def path_view(self, path: tuple[int, ...]) -> PathView:
        return {
            c: dict(zip(self.beable_factors, self.sector_labels[s]))
            for c, s in zip(self.checkpoints, path)
        }

    def count(self, predicate: Callable[[PathView], bool]) -> int:
        return sum(c for path, c in self.path_counts.items() if predicate(self.path_view(path)))

    def merge(self, other: "EnsembleStats") -> "EnsembleStats":
        if (self.checkpoints, self.sector_labels, self.seed) != (other.checkpoints, other.sector_labels, other.seed):
            raise ValueError("Cannot merge statistics of different runs")
        joint = Counter(self.joint_counts)
        joint.update(other.joint_counts)
        return EnsembleStats(
            n_runs=self.n_runs + other.n_runs,
            seed=self.seed,
            checkpoints=self.checkpoints,
            beable_factors=self.beable_factors,
            sector_labels=self.sector_labels,
            path_counts=self.path_counts + other.path_counts,
            jump_counts=self.jump_counts + other.jump_counts,
            starvation_events=self.starvation_events + other.starvation_events,
            jumps_after_final_checkpoint=self.jumps_after_final_checkpoint + other.jumps_after_final_checkpoint,
            joint_counts=dict(joint),
            trajectories=self.trajectories + other.trajectories,
        )

    def to_dict(self) -> dict:
        """Deterministic, JSON-ready summary."""
        freqs = []
        for c in self.checkpoints:
            for key, f in sorted(self.frequencies(c).items()):
                freqs.append({"checkpoint": c, "sector": key, "frequency": f})
        jumps = [
            {"segment": seg, "from": self.sector_key(s), "to": self.sector_key(d), "count": n}
            for (seg, s, d), n in sorted(self.jump_counts.items())
        ]
        return {
            "n_runs": self.n_runs,
            "seed": self.seed,
            "checkpoints": list(self.checkpoints),
            "beable_factors": list(self.beable_factors),
            "frequencies": freqs,
            "jumps": jumps,
            "starvation_events": self.starvation_events,
            "jumps_after_final_checkpoint": self.jumps_after_final_checkpoint,
            "joint_counts": dict(sorted(self.joint_counts.items())),
        }


def _run_chunk(
    table: RateTable,
    seed: int,
    start: int,
    stop: int,
    checkpoints: tuple[float, ...],
    keep: int,
) -> EnsembleStats:
    spec = table.spec
    stats = EnsembleStats(
        n_runs=stop - start,
        seed=seed,
        checkpoints=checkpoints,
        beable_factors=spec.beable_factors,
        sector_labels=tuple(s.labels for s in spec.all_sectors),
    )
    last = checkpoints[-1]
    for i in range(start, stop):
        init_rng, dyn_rng = trajectory_rngs(seed, i)
        s0 = sample_initial_sector(table, init_rng)
        path = _sample_path(table, s0, dyn_rng)

        at = []
        current, j = s0, 0
        for c in checkpoints:
            while j < len(path) and table.t1[path[j][0]] <= c:
                current = path[j][2]
                j += 1
            at.append(current)
        stats.path_counts[tuple(at)] += 1

        for k, s, d, forced in path:
            stats.jump_counts[(table.segment_labels[table.segment[k]], s, d)] += 1
            if forced:
                stats.starvation_events += 1
            if table.t1[k] > last:
                stats.jumps_after_final_checkpoint += 1
        if i < keep:
            stats.trajectories.append(_to_trajectory(table, s0, path))
    return stats


def run_ensemble(
    n: int,
    schedule: Schedule,
    spec: BeableSpec,
    policy: Optional[StepPolicy] = None,
    seed: int = SIMULATION_CONFIG["seed"],
    checkpoints: Sequence[float] = (),
    *,
    initial_pilot: StateVector,
    joint_events: Optional[Mapping[str, Callable[[PathView], bool]]] = None,
    n_jobs: int = 1,
    keep_trajectories: int = 0,
    table: Optional[RateTable] = None,
) -> EnsembleStats:
    """
    Run n independent trajectories; trajectory i draws from streams derived
    from (seed, i) only, so results do not depend on n_jobs or chunking.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    policy = policy or StepPolicy()
    cps = tuple(float(c) for c in checkpoints) or (float(schedule.t_final),)
    for c in cps:
        if not schedule.t_initial <= c <= schedule.t_final:
            raise ScheduleError(f"Checkpoint {c} outside [{schedule.t_initial}, {schedule.t_final}]")
    if list(cps) != sorted(cps):
        raise ScheduleError(f"Checkpoints must be increasing: {list(cps)}")
    if table is None:
        table = tabulate_rates(schedule, initial_pilot, spec, policy)

    n_chunks = max(1, min(n, 4 * max(1, n_jobs)))
    bounds = np.linspace(0, n, n_chunks + 1).astype(int)
    parts = Parallel(n_jobs=n_jobs)(
        delayed(_run_chunk)(table, seed, int(lo), int(hi), cps, keep_trajectories)
        for lo, hi in zip(bounds[:-1], bounds[1:])
        if hi > lo
    )
    stats = parts[0]
    for part in parts[1:]:
        stats = stats.merge(part)

    for name, predicate in (joint_events or {}).items():
        stats.joint_counts[name] = stats.count(predicate)

    limit = policy.starvation_limit(n)
    if stats.starvation_events > limit:
        logger.warning(f"Starvation rule applied {stats.starvation_events} times (limit {limit})")
    return stats
