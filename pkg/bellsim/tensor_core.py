"""
Dense linear algebra over labeled tensor-product Hilbert spaces.

Basis index convention: the leftmost factor is the most significant digit of
the mixed-radix product index (numpy C order). Units have the reduced action
constant equal to 1, so exp(-iHt) is the propagator of H.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import scipy.linalg

from config import NUMERICS


class SpaceError(ValueError):
    """Raised when a tensor space, factor, or label is malformed or unknown."""
    pass


class SpaceMismatchError(SpaceError):
    """Raised when states or operators from different spaces are combined."""
    pass


class NonHermitianError(ValueError):
    """Raised when an operator flagged Hermitian is not."""
    pass


# =============================================================================
# SPACES
# =============================================================================

@dataclass(frozen=True)
class Factor:
    """One tensor factor: a short id plus one label per basis state."""

    id: str
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))

    @property
    def dim(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise SpaceError(f"Unknown label {label!r} for factor {self.id} (labels: {list(self.labels)})")


@dataclass(frozen=True)
class TensorSpace:
    factors: tuple[Factor, ...]

    @property
    def factor_ids(self) -> tuple[str, ...]:
        return tuple(f.id for f in self.factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.dim for f in self.factors)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def position(self, factor_id: str) -> int:
        for i, f in enumerate(self.factors):
            if f.id == factor_id:
                return i
        raise SpaceError(f"Unknown factor {factor_id!r} (factors: {list(self.factor_ids)})")

    def factor(self, factor_id: str) -> Factor:
        return self.factors[self.position(factor_id)]

    def flat_index(self, labels: Mapping[str, str]) -> int:
        """Product-basis index of a full label assignment."""
        unknown = set(labels) - set(self.factor_ids)
        if unknown:
            raise SpaceError(f"Unknown factors in assignment: {sorted(unknown)}")
        missing = [fid for fid in self.factor_ids if fid not in labels]
        if missing:
            raise SpaceError(f"Missing labels for factors: {missing}")
        digits = tuple(f.index(labels[f.id]) for f in self.factors)
        return int(np.ravel_multi_index(digits, self.dims))

    def labels_of(self, index: int) -> dict[str, str]:
        digits = np.unravel_index(index, self.dims)
        return {f.id: f.labels[int(d)] for f, d in zip(self.factors, digits)}

    def subspace(self, factor_ids: Sequence[str]) -> "TensorSpace":
        """The space of a sub-product of factors, in the order given."""
        return TensorSpace(tuple(self.factor(fid) for fid in factor_ids))


FactorSpec = Union[Factor, tuple[str, Sequence[str]], Mapping[str, Sequence[str]]]


def make_space(factors: Iterable[FactorSpec]) -> TensorSpace:
    """
    Build a TensorSpace from Factor objects, (id, labels) pairs, or
    {id: labels} mappings (several keys allowed, insertion order kept).
    """
    out: list[Factor] = []
    for item in factors:
        if isinstance(item, Factor):
            out.append(item)
        elif isinstance(item, Mapping):
            out.extend(Factor(str(k), tuple(v)) for k, v in item.items())
        else:
            fid, labels = item
            out.append(Factor(str(fid), tuple(labels)))

    if not out:
        raise SpaceError("A tensor space needs at least one factor")

    seen: set[str] = set()
    for f in out:
        if f.id in seen:
            raise SpaceError(f"Duplicate factor id {f.id!r}")
        seen.add(f.id)
        if f.dim < 2:
            raise SpaceError(f"Factor {f.id} has dimension {f.dim}; need at least 2")
        if len(set(f.labels)) != f.dim:
            raise SpaceError(f"Factor {f.id} has duplicate basis labels: {list(f.labels)}")
    return TensorSpace(tuple(out))


# =============================================================================
# STATES AND OPERATORS
# =============================================================================

@dataclass(frozen=True, eq=False)
class StateVector:
    space: TensorSpace
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.shape != (self.space.dim,):
            raise SpaceMismatchError(
                f"State has shape {amps.shape}, space dimension is {self.space.dim}"
            )
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    def norm_sq(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def norm(self) -> float:
        return float(np.sqrt(self.norm_sq()))

    def is_normalized(self, tol: Optional[float] = None) -> bool:
        tol = NUMERICS["norm_tol"] if tol is None else tol
        return abs(self.norm_sq() - 1.0) <= tol

    def normalized(self) -> "StateVector":
        n = self.norm()
        if n == 0.0:
            raise ValueError("Cannot normalize the zero vector")
        return StateVector(self.space, self.amplitudes / n)

    def inner(self, other: "StateVector") -> complex:
        """<self|other>."""
        _check_same_space(self.space, other.space)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def amplitude(self, labels: Mapping[str, str]) -> complex:
        return complex(self.amplitudes[self.space.flat_index(labels)])

    def __add__(self, other: "StateVector") -> "StateVector":
        _check_same_space(self.space, other.space)
        return StateVector(self.space, self.amplitudes + other.amplitudes)

    def __sub__(self, other: "StateVector") -> "StateVector":
        _check_same_space(self.space, other.space)
        return StateVector(self.space, self.amplitudes - other.amplitudes)

    def __mul__(self, scalar: complex) -> "StateVector":
        return StateVector(self.space, self.amplitudes * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class Operator:
    space: TensorSpace
    entries: np.ndarray
    hermitian: bool = False

    def __post_init__(self) -> None:
        m = np.array(self.entries, dtype=complex)
        n = self.space.dim
        if m.shape != (n, n):
            raise SpaceMismatchError(f"Operator has shape {m.shape}, space dimension is {n}")
        if self.hermitian:
            err = float(np.max(np.abs(m - m.conj().T))) if n else 0.0
            if err > NUMERICS["hermitian_tol"]:
                raise NonHermitianError(f"Operator flagged Hermitian deviates by {err:.3e}")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    def apply(self, psi: StateVector) -> StateVector:
        _check_same_space(self.space, psi.space)
        return StateVector(self.space, self.entries @ psi.amplitudes)

    def __matmul__(self, other: "Operator") -> "Operator":
        _check_same_space(self.space, other.space)
        return Operator(self.space, self.entries @ other.entries)

    def __add__(self, other: "Operator") -> "Operator":
        _check_same_space(self.space, other.space)
        return Operator(self.space, self.entries + other.entries, self.hermitian and other.hermitian)


def identity(space: TensorSpace) -> Operator:
    """Identity operator on the space."""
    return Operator(space, np.eye(space.dim, dtype=complex), hermitian=True)


def zero_operator(space: TensorSpace) -> Operator:
    """Zero operator on the space."""
    return Operator(space, np.zeros((space.dim, space.dim), dtype=complex), hermitian=True)


def _check_same_space(a: TensorSpace, b: TensorSpace) -> None:
    if a is not b and a != b:
        raise SpaceMismatchError(f"Space mismatch: {list(a.factor_ids)} vs {list(b.factor_ids)}")


# =============================================================================
# CONSTRUCTION
# =============================================================================

def basis_state(space: TensorSpace, labels: Mapping[str, str]) -> StateVector:
    """Product basis state with one label per factor."""
    amps = np.zeros(space.dim, dtype=complex)
    amps[space.flat_index(labels)] = 1.0
    return StateVector(space, amps)


def superpose(terms: Sequence[tuple[complex, StateVector]]) -> StateVector:
    """Linear combination of states; no normalization is applied."""
    if not terms:
        raise ValueError("superpose needs at least one term")
    space = terms[0][1].space
    amps = np.zeros(space.dim, dtype=complex)
    for coeff, psi in terms:
        _check_same_space(space, psi.space)
        amps = amps + coeff * psi.amplitudes
    return StateVector(space, amps)


def embed_operator(local: Operator, target: TensorSpace) -> Operator:
    """
    Identity-pad an operator on a sub-product of factors into the target space.

    The local space may list its factors in any order; each must exist in the
    target with identical labels.
    """
    local_ids = local.space.factor_ids
    for f in local.space.factors:
        try:
            tf = target.factor(f.id)
        except SpaceError:
            raise SpaceError(f"Factor {f.id!r} of the local operator is not in the target space")
        if tf.labels != f.labels:
            raise SpaceMismatchError(
                f"Factor {f.id} labels differ: local {list(f.labels)} vs target {list(tf.labels)}"
            )

    rest_ids = [fid for fid in target.factor_ids if fid not in local_ids]
    rest_dim = int(np.prod([target.factor(fid).dim for fid in rest_ids])) if rest_ids else 1
    full = np.kron(local.entries, np.eye(rest_dim, dtype=complex))

    current = list(local_ids) + rest_ids
    current_dims = [target.factor(fid).dim for fid in current]
    n = len(current)
    tensor = full.reshape(current_dims + current_dims)
    perm = [current.index(fid) for fid in target.factor_ids]
    tensor = tensor.transpose(perm + [n + p for p in perm])
    return Operator(target, tensor.reshape(target.dim, target.dim), hermitian=local.hermitian)


def matrix_element(bra: StateVector, op: Operator, ket: StateVector) -> complex:
    """<bra|op|ket> with the bra conjugated."""
    _check_same_space(bra.space, op.space)
    _check_same_space(op.space, ket.space)
    return complex(np.vdot(bra.amplitudes, op.entries @ ket.amplitudes))


def project(psi: StateVector, labels: Mapping[str, str]) -> StateVector:
    """Zero every amplitude whose basis labels disagree with the assignment."""
    grids = np.indices(psi.space.dims).reshape(len(psi.space.dims), -1)
    mask = np.ones(psi.space.dim, dtype=bool)
    for fid, label in labels.items():
        pos = psi.space.position(fid)
        mask &= grids[pos] == psi.space.factors[pos].index(label)
    return StateVector(psi.space, np.where(mask, psi.amplitudes, 0.0))


def is_unitary(u: Union[Operator, np.ndarray], tol: Optional[float] = None) -> bool:
    """True if u^dagger u equals the identity within tol."""
    tol = NUMERICS["unitary_tol"] if tol is None else tol
    m = u.entries if isinstance(u, Operator) else np.asarray(u, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0])))) <= tol


# =============================================================================
# PROPAGATION
# =============================================================================

@dataclass(eq=False)
class Propagator:
    """
    Cached eigendecomposition of a Hermitian operator.

    evolve(amps, t) returns exp(-iHt) amps; states_at() evaluates a whole
    batch of times from one set of eigen-coefficients.
    """

    hamiltonian: Operator
    energies: np.ndarray = field(init=False, repr=False)
    vectors: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.hamiltonian.hermitian:
            raise NonHermitianError("Propagation needs an operator flagged Hermitian")
        self.energies, self.vectors = scipy.linalg.eigh(self.hamiltonian.entries)

    def coefficients(self, amps: np.ndarray) -> np.ndarray:
        return self.vectors.conj().T @ amps

    def states_at(self, coeffs: np.ndarray, elapsed: Union[float, np.ndarray]) -> np.ndarray:
        """Amplitudes at each elapsed time; shape (dim,) or (n_times, dim)."""
        elapsed_arr = np.asarray(elapsed, dtype=float)
        if elapsed_arr.ndim == 0:
            return self.vectors @ (np.exp(-1j * self.energies * float(elapsed_arr)) * coeffs)
        phases = np.exp(-1j * np.outer(elapsed_arr, self.energies))
        return (phases * coeffs[None, :]) @ self.vectors.T

    def evolve(self, amps: np.ndarray, duration: float) -> np.ndarray:
        return self.states_at(self.coefficients(amps), duration)


def evolve_unitary(h: Operator, duration: float, psi: StateVector) -> StateVector:
    """exp(-i H duration) psi by exact eigendecomposition of H."""
    _check_same_space(h.space, psi.space)
    if duration < 0:
        raise ValueError(f"Duration must be non-negative, got {duration}")
    if not h.hermitian:
        raise NonHermitianError("evolve_unitary needs an operator flagged Hermitian")
    if duration == 0:
        return psi
    return StateVector(psi.space, Propagator(h).evolve(psi.amplitudes, duration))


def global_phase_distance(a: StateVector, b: StateVector) -> float:
    """Max componentwise |a - e^{i phi} b| minimised over the global phase."""
    _check_same_space(a.space, b.space)
    overlap = np.vdot(b.amplitudes, a.amplitudes)
    phase = overlap / abs(overlap) if abs(overlap) > 0 else 1.0
    return float(np.max(np.abs(a.amplitudes - phase * b.amplitudes)))
