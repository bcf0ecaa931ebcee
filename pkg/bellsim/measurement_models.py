"""
Builders for measurement processes: the rotation measurement that carries
|k>|ready> to |k>|k> over a duration tau, and the controlled state-preparation
event.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import scipy.linalg

from bellsim.beables import BeableSpec
from bellsim.tensor_core import (
    Operator,
    SpaceError,
    TensorSpace,
    embed_operator,
    is_unitary,
)
from config import NUMERICS

logger = logging.getLogger(__name__)


class MeasurementModelError(ValueError):
    """Raised when a measurement or preparation description is malformed."""
    pass


class NonOrthonormalOutcomesError(MeasurementModelError):
    """Raised when the outcome system vectors are not orthonormal."""
    pass


class NonUnitaryError(MeasurementModelError):
    """Raised when a preparation block is not unitary."""
    pass


class CrossSectorCouplingError(MeasurementModelError):
    """Raised when an event unitary couples different beable sectors."""
    pass


# System-label tuple (one label per system factor) -> amplitude
SystemVector = Mapping[tuple[str, ...], complex]


@dataclass(frozen=True)
class Outcome:
    pointer_label: str
    vector: tuple[tuple[tuple[str, ...], complex], ...]

    @classmethod
    def of(cls, pointer_label: str, vector: SystemVector) -> "Outcome":
        items = tuple((tuple(str(x) for x in k), complex(v)) for k, v in vector.items())
        return cls(str(pointer_label), items)


@dataclass(frozen=True)
class MeasurementRotation:
    system_factors: tuple[str, ...]
    pointer_factor: str
    outcomes: tuple[Outcome, ...]
    tau: float
    ready_label: str = "0"

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise MeasurementModelError(f"Measurement duration must be positive, got {self.tau}")
        if not self.outcomes:
            raise MeasurementModelError("A measurement needs at least one outcome")
        pointers = [o.pointer_label for o in self.outcomes]
        if len(set(pointers)) != len(pointers):
            raise MeasurementModelError(f"Pointer labels must be distinct: {pointers}")
        if self.ready_label in pointers:
            raise MeasurementModelError(f"Pointer label {self.ready_label!r} is the ready label")
        if self.pointer_factor in self.system_factors:
            raise MeasurementModelError("The pointer cannot also be a measured system factor")

    @property
    def lam(self) -> float:
        """Angular rate; lam * tau = pi / 2."""
        return math.pi / (2.0 * self.tau)

    @property
    def pointer_labels(self) -> tuple[str, ...]:
        return tuple(o.pointer_label for o in self.outcomes)

    @classmethod
    def from_labels(
        cls,
        system_factor: str,
        pointer_factor: str,
        mapping: Mapping[str, str],
        tau: float,
        ready_label: str = "0",
    ) -> "MeasurementRotation":
        """Basis measurement: system label k is recorded as pointer label mapping[k]."""
        outcomes = tuple(Outcome.of(p, {(k,): 1.0}) for k, p in mapping.items())
        return cls((system_factor,), pointer_factor, outcomes, tau, ready_label)


def _system_matrix(m: MeasurementRotation, sub: TensorSpace) -> np.ndarray:
    """Columns are the outcome vectors in the system sub-space basis."""
    cols = np.zeros((sub.dim, len(m.outcomes)), dtype=complex)
    for j, outcome in enumerate(m.outcomes):
        for labels, amp in outcome.vector:
            if len(labels) != len(m.system_factors):
                raise MeasurementModelError(
                    f"Outcome {outcome.pointer_label}: label tuple {labels} does not match "
                    f"system factors {list(m.system_factors)}"
                )
            try:
                idx = sub.flat_index(dict(zip(m.system_factors, labels)))
            except SpaceError as e:
                raise MeasurementModelError(f"Outcome {outcome.pointer_label}: {e}") from e
            cols[idx, j] += amp
    return cols


def rotation_hamiltonian(m: MeasurementRotation, space: TensorSpace) -> Operator:
    """
    H = i lam sum_k |v_k><v_k|_sys (x) (|k><ready| - |ready><k|)_pointer,
    embedded into the full space.
    """
    sub_ids = list(m.system_factors) + [m.pointer_factor]
    local_space = space.subspace(sub_ids)
    sys_space = space.subspace(m.system_factors)
    pointer = space.factor(m.pointer_factor)
    for label in m.pointer_labels + (m.ready_label,):
        pointer.index(label)

    vecs = _system_matrix(m, sys_space)
    gram = vecs.conj().T @ vecs
    err = float(np.max(np.abs(gram - np.eye(len(m.outcomes)))))
    if err > NUMERICS["orthonormal_tol"]:
        raise NonOrthonormalOutcomesError(
            f"Outcome vectors of the {m.pointer_factor} measurement are not orthonormal (Gram error {err:.3e})"
        )

    ready = pointer.index(m.ready_label)
    local = np.zeros((local_space.dim, local_space.dim), dtype=complex)
    for j, outcome in enumerate(m.outcomes):
        k = pointer.index(outcome.pointer_label)
        flip = np.zeros((pointer.dim, pointer.dim), dtype=complex)
        flip[k, ready] = 1.0
        flip[ready, k] = -1.0
        local += np.kron(np.outer(vecs[:, j], vecs[:, j].conj()), flip)
    local *= 1j * m.lam
    logger.debug(f"{m.pointer_factor} rotation over {list(m.system_factors)}: lam={m.lam:.6f}")
    return embed_operator(Operator(local_space, local, hermitian=True), space)


def preparation_unitary(source: Sequence[complex], target: Sequence[complex]) -> np.ndarray:
    """A unitary U with U|source> = |target> (both unit vectors)."""
    src = np.asarray(source, dtype=complex)
    tgt = np.asarray(target, dtype=complex)
    for name, v in (("source", src), ("target", tgt)):
        if abs(np.vdot(v, v).real - 1.0) > NUMERICS["norm_tol"]:
            raise MeasurementModelError(f"Preparation {name} vector is not normalized")
    if src.shape != tgt.shape:
        raise MeasurementModelError("Preparation source and target differ in dimension")
    return _completion(tgt) @ _completion(src).conj().T


def _completion(v: np.ndarray) -> np.ndarray:
    """Unitary whose first column is exactly v."""
    d = v.shape[0]
    q, _ = scipy.linalg.qr(np.column_stack([v, np.eye(d, dtype=complex)]))
    q = q[:, :d]
    q[:, 0] *= np.vdot(q[:, 0], v)
    return q


def controlled_preparation(
    control_factor: str,
    blocks: Mapping[str, Union[np.ndarray, Operator]],
    target_factor: str,
    space: TensorSpace,
    spec: Optional[BeableSpec] = None,
) -> Operator:
    """
    Block-diagonal controlled unitary: acts as blocks[c] on the target factor
    when the control factor holds label c, identity for unlisted labels.

    With a BeableSpec, rejects any element coupling two different sectors.
    """
    control = space.factor(control_factor)
    target = space.factor(target_factor)
    local_space = space.subspace([control_factor, target_factor])

    local = np.zeros((local_space.dim, local_space.dim), dtype=complex)
    for c, label in enumerate(control.labels):
        block = blocks.get(label)
        if block is None:
            u = np.eye(target.dim, dtype=complex)
        else:
            u = block.entries if isinstance(block, Operator) else np.asarray(block, dtype=complex)
            if u.shape != (target.dim, target.dim):
                raise MeasurementModelError(
                    f"Block for {control_factor}={label} has shape {u.shape}, expected {(target.dim,) * 2}"
                )
            if not is_unitary(u):
                raise NonUnitaryError(f"Block for {control_factor}={label} is not unitary")
        proj = np.zeros((control.dim, control.dim), dtype=complex)
        proj[c, c] = 1.0
        local += np.kron(proj, u)
    unknown = set(blocks) - set(control.labels)
    if unknown:
        raise MeasurementModelError(f"Unknown control labels: {sorted(unknown)}")

    op = embed_operator(Operator(local_space, local), space)
    if spec is not None:
        check_sector_diagonal(op, spec)
    return op


def check_sector_diagonal(op: Operator, spec: BeableSpec) -> None:
    """Raise if op has any element between basis states of different sectors."""
    rows, cols = np.nonzero(np.abs(op.entries) > NUMERICS["matrix_floor"])
    sec = spec.sector_of_index
    bad = sec[rows] != sec[cols]
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise CrossSectorCouplingError(
            f"Operator couples sector {spec.sector(int(sec[cols[i]]))} to {spec.sector(int(sec[rows[i]]))}"
        )
