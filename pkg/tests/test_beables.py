import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bellsim.beables import (
    BeableSpec,
    BeableSpecError,
    Sector,
    UnnormalizedStateError,
    born_weights,
    decompose,
    marginal,
    parse_sector,
    sector_weights,
    sectors,
)
from bellsim.fr_experiment import reference_pilot
from bellsim.tensor_core import StateVector, make_space
from config import EXPECTED_COMPONENT_COUNTS
from conftest import random_state


@pytest.fixture
def space():
    return make_space([("p", ["0", "1", "2"]), ("s", ["u", "d"]), ("q", ["a", "b"])])


def test_beable_factors_follow_space_order(space):
    spec = BeableSpec(space, ("q", "p"))
    assert spec.beable_factors == ("p", "q")
    assert spec.shape == (3, 2)
    assert spec.n_sectors == 6


@pytest.mark.parametrize("beables", [(), ("p", "p"), ("p", "zz")])
def test_bad_beable_declarations(space, beables):
    with pytest.raises(BeableSpecError):
        BeableSpec(space, beables)


def test_sector_order_and_keys(space):
    spec = BeableSpec(space, ("p", "q"))
    keys = [s.key for s in sectors(spec)]
    assert keys == ["0,a", "0,b", "1,a", "1,b", "2,a", "2,b"]
    assert spec.sector(3) == Sector(("p", "q"), ("1", "b"))
    assert spec.sector(3)["q"] == "b"
    assert str(spec.sector(3)) == "1,b"


def test_index_of_accepts_every_form(space):
    spec = BeableSpec(space, ("p", "q"))
    target = spec.sector(4)
    assert spec.index_of(target) == 4
    assert spec.index_of("2,a") == 4
    assert spec.index_of({"p": "2", "q": "a"}) == 4
    assert spec.index_of(("2", "a")) == 4
    assert parse_sector(spec, "2,a") == target
    with pytest.raises(BeableSpecError):
        spec.index_of({"p": "2"})
    with pytest.raises(BeableSpecError):
        spec.index_of("3,a")


def test_sector_of_index_ignores_non_beables(space):
    spec = BeableSpec(space, ("p",))
    # s and q do not change the sector
    assert list(spec.sector_of_index) == [0] * 4 + [1] * 4 + [2] * 4


@given(st.integers(0, 2**32 - 1))
def test_components_reconstruct_the_state(seed):
    space = make_space([("p", ["0", "1", "2"]), ("s", ["u", "d"]), ("q", ["a", "b"])])
    spec = BeableSpec(space, ("p", "q"))
    psi = StateVector(space, random_state(space.dim, seed))
    comps = decompose(psi, spec)
    total = sum(c.component.amplitudes for c in comps)
    assert np.allclose(total, psi.amplitudes)
    assert sum(c.weight for c in comps) == pytest.approx(1.0)
    for c in comps:
        assert c.component.norm_sq() == pytest.approx(c.weight)


def test_decompose_omits_empty_sectors(space):
    spec = BeableSpec(space, ("p",))
    amps = np.zeros(space.dim, dtype=complex)
    amps[0] = amps[8] = math.sqrt(0.5)
    comps = decompose(StateVector(space, amps), spec)
    assert [c.sector.key for c in comps] == ["0", "2"]


def test_sector_weights_sum_to_norm(space):
    spec = BeableSpec(space, ("s",))
    psi = StateVector(space, 2 * random_state(space.dim, 5))
    assert sector_weights(psi, spec).sum() == pytest.approx(4.0)


def test_born_weights_need_normalized_state(space):
    spec = BeableSpec(space, ("p",))
    psi = StateVector(space, random_state(space.dim, 9))
    weights = born_weights(psi, spec)
    assert set(weights) == set(spec.all_sectors)
    assert sum(weights.values()) == pytest.approx(1.0)
    with pytest.raises(UnnormalizedStateError):
        born_weights(psi * 2.0, spec)


def test_marginal_respects_requested_order(space):
    spec = BeableSpec(space, ("p", "q"))
    psi = StateVector(space, random_state(space.dim, 13))
    w = sector_weights(psi, spec)
    pq = marginal(w, spec, ["p", "q"])
    qp = marginal(w, spec, ["q", "p"])
    for (p, q), v in pq.items():
        assert qp[(q, p)] == pytest.approx(v)
    only_q = marginal(born_weights(psi, spec), spec, ["q"])
    assert only_q[("a",)] == pytest.approx(sum(v for (p, q), v in pq.items() if q == "a"))
    with pytest.raises(BeableSpecError):
        marginal(w, spec, ["s"])


@pytest.mark.parametrize("k", range(5))
def test_reference_pilots_have_expected_component_counts(k):
    psi = reference_pilot(k)
    spec = BeableSpec(psi.space, ("F1", "F2", "A", "W"))
    assert psi.is_normalized()
    assert len(decompose(psi, spec)) == EXPECTED_COMPONENT_COUNTS[k]
