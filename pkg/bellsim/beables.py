"""
Beables, viable subspaces (sectors), and Born weights.

A sector is one joint assignment of values to the beable factors. Sectors are
ordered lexicographically by (factor order, label order), and serialized as
the comma-joined labels, e.g. "tail,+,ok,0".
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from bellsim.tensor_core import SpaceMismatchError, StateVector, TensorSpace
from config import NUMERICS


class BeableSpecError(ValueError):
    """Raised when the beable declaration does not fit the space."""
    pass


class UnnormalizedStateError(ValueError):
    """Raised when Born weights are requested for a state that is not normalized."""
    pass


@dataclass(frozen=True)
class Sector:
    factors: tuple[str, ...]
    labels: tuple[str, ...]

    @property
    def key(self) -> str:
        return ",".join(self.labels)

    @property
    def assignment(self) -> dict[str, str]:
        return dict(zip(self.factors, self.labels))

    def __getitem__(self, factor_id: str) -> str:
        return self.labels[self.factors.index(factor_id)]

    def __str__(self) -> str:
        return self.key


@dataclass(frozen=True)
class BeableSpec:
    space: TensorSpace
    beable_factors: tuple[str, ...]

    def __post_init__(self) -> None:
        ids = tuple(self.beable_factors)
        if not ids:
            raise BeableSpecError("At least one beable factor is required")
        if len(set(ids)) != len(ids):
            raise BeableSpecError(f"Duplicate beable factors: {list(ids)}")
        missing = [fid for fid in ids if fid not in self.space.factor_ids]
        if missing:
            raise BeableSpecError(f"Beable factors not in space: {missing}")
        # Sector order follows the space's factor order
        ordered = tuple(fid for fid in self.space.factor_ids if fid in ids)
        object.__setattr__(self, "beable_factors", ordered)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.space.factor(fid).dim for fid in self.beable_factors)

    @property
    def n_sectors(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def positions(self) -> tuple[int, ...]:
        return tuple(self.space.position(fid) for fid in self.beable_factors)

    @cached_property
    def sector_of_index(self) -> np.ndarray:
        """Sector index of every product-basis index."""
        digits = np.indices(self.space.dims).reshape(len(self.space.dims), -1)
        out = np.ravel_multi_index(tuple(digits[p] for p in self.positions), self.shape)
        out.setflags(write=False)
        return out

    @cached_property
    def all_sectors(self) -> tuple[Sector, ...]:
        label_lists = [self.space.factor(fid).labels for fid in self.beable_factors]
        return tuple(Sector(self.beable_factors, combo) for combo in itertools.product(*label_lists))

    @cached_property
    def _index_by_labels(self) -> dict[tuple[str, ...], int]:
        return {s.labels: i for i, s in enumerate(self.all_sectors)}

    def sector(self, index: int) -> Sector:
        return self.all_sectors[index]

    def index_of(self, sector: Union[Sector, str, Mapping[str, str], Sequence[str]]) -> int:
        if isinstance(sector, Sector):
            labels = sector.labels
        elif isinstance(sector, str):
            labels = tuple(sector.split(","))
        elif isinstance(sector, Mapping):
            try:
                labels = tuple(str(sector[fid]) for fid in self.beable_factors)
            except KeyError as e:
                raise BeableSpecError(f"Sector assignment missing beable factor {e}") from e
        else:
            labels = tuple(str(x) for x in sector)
        try:
            return self._index_by_labels[labels]
        except KeyError:
            raise BeableSpecError(
                f"Unknown sector {','.join(labels)} for beables {list(self.beable_factors)}"
            )


@dataclass(frozen=True, eq=False)
class ViableComponent:
    sector: Sector
    component: StateVector
    weight: float


def _check_space(psi: StateVector, spec: BeableSpec) -> None:
    if psi.space != spec.space:
        raise SpaceMismatchError("State and beable spec live in different spaces")


def sectors(spec: BeableSpec) -> list[Sector]:
    """Every sector of the spec, in index order."""
    return list(spec.all_sectors)


def parse_sector(spec: BeableSpec, key: str) -> Sector:
    """Inverse of Sector.key."""
    return spec.sector(spec.index_of(key))


def sector_weights(psi: StateVector, spec: BeableSpec) -> np.ndarray:
    """Squared norms of the viable components, in sector order."""
    _check_space(psi, spec)
    probs = np.abs(psi.amplitudes) ** 2
    return np.bincount(spec.sector_of_index, weights=probs, minlength=spec.n_sectors)


def decompose(psi: StateVector, spec: BeableSpec) -> list[ViableComponent]:
    """Viable components of psi; sectors with weight below the zero threshold are omitted."""
    weights = sector_weights(psi, spec)
    out = []
    for idx in np.flatnonzero(weights >= NUMERICS["zero_weight"]):
        mask = spec.sector_of_index == idx
        comp = StateVector(psi.space, np.where(mask, psi.amplitudes, 0.0))
        out.append(ViableComponent(spec.sector(int(idx)), comp, float(weights[idx])))
    return out


def born_weights(psi: StateVector, spec: BeableSpec) -> dict[Sector, float]:
    """Born probability of every sector (zeros included), for a normalized psi."""
    norm_sq = psi.norm_sq()
    if abs(norm_sq - 1.0) > NUMERICS["norm_tol"]:
        raise UnnormalizedStateError(f"State has squared norm {norm_sq:.12f}; normalize it first")
    weights = sector_weights(psi, spec)
    return {s: float(w) for s, w in zip(spec.all_sectors, weights)}


def marginal(
    weights: Union[np.ndarray, Mapping[Sector, float]],
    spec: BeableSpec,
    factor_ids: Iterable[str],
) -> dict[tuple[str, ...], float]:
    """
    Distribution over the chosen beable factors, keyed by label tuples in
    the order the factors are listed.
    """
    if isinstance(weights, Mapping):
        arr = np.array([weights.get(s, 0.0) for s in spec.all_sectors], dtype=float)
    else:
        arr = np.asarray(weights, dtype=float)
    keep = list(factor_ids)
    for fid in keep:
        if fid not in spec.beable_factors:
            raise BeableSpecError(f"{fid!r} is not a beable factor")
    axes = [spec.beable_factors.index(fid) for fid in keep]
    table = arr.reshape(spec.shape)
    other = tuple(i for i in range(len(spec.shape)) if i not in axes)
    reduced = table.sum(axis=other)
    # reduced keeps the remaining axes in beable order; reorder to the requested order
    remaining = [i for i in range(len(spec.shape)) if i in axes]
    reduced = np.transpose(reduced, [remaining.index(a) for a in axes])
    label_lists = [spec.space.factor(fid).labels for fid in keep]
    return {
        combo: float(reduced[idx])
        for combo, idx in zip(
            itertools.product(*label_lists),
            itertools.product(*[range(len(ls)) for ls in label_lists]),
        )
    }
