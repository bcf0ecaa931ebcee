import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bellsim.beables import BeableSpec
from bellsim.measurement_models import (
    CrossSectorCouplingError,
    MeasurementModelError,
    MeasurementRotation,
    NonOrthonormalOutcomesError,
    NonUnitaryError,
    Outcome,
    controlled_preparation,
    preparation_unitary,
    rotation_hamiltonian,
)
from bellsim.tensor_core import basis_state, evolve_unitary, is_unitary, make_space, superpose
from conftest import random_state

TAU = 0.5


@pytest.fixture
def space():
    return make_space([("S", ["1", "2"]), ("E", ["0", "1", "2"])])


@pytest.fixture
def rotation():
    return MeasurementRotation.from_labels("S", "E", {"1": "1", "2": "2"}, TAU)


def test_lam_completes_quarter_turn(rotation):
    assert rotation.lam * rotation.tau == pytest.approx(math.pi / 2)
    assert rotation.pointer_labels == ("1", "2")


def test_rotation_hamiltonian_is_hermitian(space, rotation):
    h = rotation_hamiltonian(rotation, space)
    assert h.hermitian
    assert np.allclose(h.entries, h.entries.conj().T)


@pytest.mark.parametrize("k", ["1", "2"])
def test_rotation_records_basis_state(space, rotation, k):
    h = rotation_hamiltonian(rotation, space)
    start = basis_state(space, {"S": k, "E": "0"})
    done = evolve_unitary(h, TAU, start)
    assert abs(done.amplitude({"S": k, "E": k})) == pytest.approx(1.0)

    third = evolve_unitary(h, TAU / 3, start)
    angle = rotation.lam * TAU / 3
    assert third.amplitude({"S": k, "E": "0"}) == pytest.approx(math.cos(angle))
    assert third.amplitude({"S": k, "E": k}) == pytest.approx(math.sin(angle))


def test_rotation_is_linear_in_the_system_state(space, rotation):
    h = rotation_hamiltonian(rotation, space)
    a, b = math.sqrt(1 / 3), math.sqrt(2 / 3)
    psi = superpose([
        (a, basis_state(space, {"S": "1", "E": "0"})),
        (b, basis_state(space, {"S": "2", "E": "0"})),
    ])
    out = evolve_unitary(h, TAU, psi)
    assert out.amplitude({"S": "1", "E": "1"}) == pytest.approx(a)
    assert out.amplitude({"S": "2", "E": "2"}) == pytest.approx(b)


def test_entangled_basis_measurement():
    space = make_space([("P", ["0", "ok", "fail"]), ("X", ["h", "t"]), ("Y", ["h", "t"])])
    r = math.sqrt(0.5)
    m = MeasurementRotation(
        ("X", "Y"),
        "P",
        (
            Outcome.of("ok", {("h", "h"): r, ("t", "t"): -r}),
            Outcome.of("fail", {("h", "h"): r, ("t", "t"): r}),
        ),
        TAU,
    )
    h = rotation_hamiltonian(m, space)
    tt = basis_state(space, {"P": "0", "X": "t", "Y": "t"})
    out = evolve_unitary(h, TAU, tt)
    # |tt> = (fail - ok)/sqrt(2)
    assert out.amplitude({"P": "ok", "X": "t", "Y": "t"}) == pytest.approx(0.5)
    assert out.amplitude({"P": "ok", "X": "h", "Y": "h"}) == pytest.approx(-0.5)
    assert out.amplitude({"P": "fail", "X": "t", "Y": "t"}) == pytest.approx(0.5)


def test_non_orthonormal_outcomes_rejected(space):
    m = MeasurementRotation(
        ("S",),
        "E",
        (Outcome.of("1", {("1",): 1.0}), Outcome.of("2", {("1",): 0.6, ("2",): 0.8})),
        TAU,
    )
    with pytest.raises(NonOrthonormalOutcomesError):
        rotation_hamiltonian(m, space)


@pytest.mark.parametrize("kwargs", [
    {"tau": 0.0},
    {"outcomes": ()},
    {"outcomes": (Outcome.of("1", {("1",): 1.0}), Outcome.of("1", {("2",): 1.0}))},
    {"outcomes": (Outcome.of("0", {("1",): 1.0}),)},
    {"pointer_factor": "S"},
])
def test_malformed_rotation(kwargs):
    args = {
        "system_factors": ("S",),
        "pointer_factor": "E",
        "outcomes": (Outcome.of("1", {("1",): 1.0}),),
        "tau": TAU,
    }
    args.update(kwargs)
    with pytest.raises(MeasurementModelError):
        MeasurementRotation(**args)


def test_outcome_label_tuple_must_match_system(space):
    m = MeasurementRotation(("S",), "E", (Outcome.of("1", {("1", "1"): 1.0}),), TAU)
    with pytest.raises(MeasurementModelError):
        rotation_hamiltonian(m, space)


@given(st.integers(0, 2**32 - 1), st.integers(2, 5))
def test_preparation_unitary_maps_source_to_target(seed, dim):
    src = random_state(dim, seed)
    tgt = random_state(dim, seed + 1)
    u = preparation_unitary(src, tgt)
    assert is_unitary(u)
    assert np.allclose(u @ src, tgt)


def test_preparation_rejects_bad_vectors():
    with pytest.raises(MeasurementModelError):
        preparation_unitary([1.0, 1.0], [1.0, 0.0])
    with pytest.raises(MeasurementModelError):
        preparation_unitary([1.0, 0.0], [1.0, 0.0, 0.0])


@pytest.fixture
def prep_space():
    return make_space([("F", ["0", "head", "tail"]), ("S", ["up", "down"])])


def test_controlled_preparation_acts_per_control_label(prep_space):
    spec = BeableSpec(prep_space, ("F",))
    r = math.sqrt(0.5)
    blocks = {
        "head": preparation_unitary([1, 0], [0, 1]),
        "tail": preparation_unitary([1, 0], [r, r]),
    }
    op = controlled_preparation("F", blocks, "S", prep_space, spec)
    assert is_unitary(op)
    head = op.apply(basis_state(prep_space, {"F": "head", "S": "up"}))
    assert abs(head.amplitude({"F": "head", "S": "down"})) == pytest.approx(1.0)
    tail = op.apply(basis_state(prep_space, {"F": "tail", "S": "up"}))
    assert tail.amplitude({"F": "tail", "S": "up"}) == pytest.approx(r)
    assert tail.amplitude({"F": "tail", "S": "down"}) == pytest.approx(r)
    ready = op.apply(basis_state(prep_space, {"F": "0", "S": "up"}))
    assert ready.amplitude({"F": "0", "S": "up"}) == pytest.approx(1.0)


def test_controlled_preparation_errors(prep_space):
    with pytest.raises(NonUnitaryError):
        controlled_preparation("F", {"head": 2 * np.eye(2)}, "S", prep_space)
    with pytest.raises(MeasurementModelError):
        controlled_preparation("F", {"head": np.eye(3)}, "S", prep_space)
    with pytest.raises(MeasurementModelError):
        controlled_preparation("F", {"heads": np.eye(2)}, "S", prep_space)


def test_controlled_preparation_must_not_move_beables(prep_space):
    spec = BeableSpec(prep_space, ("S",))
    flip = np.array([[0, 1], [1, 0]], dtype=complex)
    with pytest.raises(CrossSectorCouplingError):
        controlled_preparation("F", {"head": flip}, "S", prep_space, spec)
