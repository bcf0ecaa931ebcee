import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bellsim.tensor_core import (
    Factor,
    NonHermitianError,
    Operator,
    Propagator,
    SpaceError,
    SpaceMismatchError,
    StateVector,
    basis_state,
    embed_operator,
    evolve_unitary,
    global_phase_distance,
    identity,
    is_unitary,
    make_space,
    matrix_element,
    project,
    superpose,
    zero_operator,
)
from conftest import random_hermitian, random_state

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)


def test_make_space_accepts_mixed_factor_specs():
    space = make_space([Factor("a", ("0", "1")), ("b", ["x", "y", "z"]), {"c": ["u", "d"]}])
    assert space.factor_ids == ("a", "b", "c")
    assert space.dims == (2, 3, 2)
    assert space.dim == 12


@pytest.mark.parametrize("factors", [
    [],
    [("a", ["0", "1"]), ("a", ["0", "1"])],
    [("a", ["0"])],
    [("a", ["0", "0"])],
])
def test_make_space_rejects_malformed(factors):
    with pytest.raises(SpaceError):
        make_space(factors)


def test_flat_index_leftmost_factor_most_significant(qubit_qutrit):
    assert qubit_qutrit.flat_index({"a": "1", "b": "z"}) == 5
    assert qubit_qutrit.flat_index({"a": "0", "b": "y"}) == 1
    assert qubit_qutrit.labels_of(4) == {"a": "1", "b": "y"}


def test_flat_index_errors(qubit_qutrit):
    with pytest.raises(SpaceError):
        qubit_qutrit.flat_index({"a": "0"})
    with pytest.raises(SpaceError):
        qubit_qutrit.flat_index({"a": "0", "b": "x", "c": "0"})
    with pytest.raises(SpaceError):
        qubit_qutrit.flat_index({"a": "2", "b": "x"})


def test_state_vector_shape_checked(qubit_qutrit):
    with pytest.raises(SpaceMismatchError):
        StateVector(qubit_qutrit, np.zeros(5))


def test_state_vector_is_read_only(qubit_qutrit):
    psi = basis_state(qubit_qutrit, {"a": "0", "b": "x"})
    with pytest.raises(ValueError):
        psi.amplitudes[0] = 2.0


def test_superpose_and_inner(qubit_qutrit):
    up = basis_state(qubit_qutrit, {"a": "0", "b": "x"})
    down = basis_state(qubit_qutrit, {"a": "1", "b": "x"})
    psi = superpose([(math.sqrt(1 / 3), up), (math.sqrt(2 / 3), down)])
    assert psi.is_normalized()
    assert psi.inner(up) == pytest.approx(math.sqrt(1 / 3))
    assert psi.amplitude({"a": "1", "b": "x"}) == pytest.approx(math.sqrt(2 / 3))
    with pytest.raises(ValueError):
        superpose([])


def test_inner_rejects_other_space(qubit_qutrit):
    other = make_space([("a", ["0", "1"])])
    with pytest.raises(SpaceMismatchError):
        basis_state(qubit_qutrit, {"a": "0", "b": "x"}).inner(basis_state(other, {"a": "0"}))


def test_normalize_zero_vector_raises(qubit_qutrit):
    with pytest.raises(ValueError):
        StateVector(qubit_qutrit, np.zeros(6)).normalized()


def test_hermitian_flag_is_checked(qubit_qutrit):
    m = np.zeros((6, 6), dtype=complex)
    m[0, 1] = 1.0
    with pytest.raises(NonHermitianError):
        Operator(qubit_qutrit, m, hermitian=True)
    Operator(qubit_qutrit, m)


def test_identity_and_zero(qubit_qutrit):
    psi = StateVector(qubit_qutrit, random_state(6, 1))
    assert np.allclose(identity(qubit_qutrit).apply(psi).amplitudes, psi.amplitudes)
    assert np.allclose(zero_operator(qubit_qutrit).apply(psi).amplitudes, 0.0)


def test_embed_single_factor_matches_kron():
    space = make_space([("a", ["0", "1"]), ("b", ["0", "1"])])
    local = Operator(space.subspace(["b"]), SIGMA_X, hermitian=True)
    full = embed_operator(local, space)
    assert np.allclose(full.entries, np.kron(np.eye(2), SIGMA_X))
    assert full.hermitian


def test_embed_respects_local_factor_order():
    space = make_space([("a", ["0", "1"]), ("b", ["0", "1"]), ("c", ["0", "1"])])
    a_op, c_op = SIGMA_X, SIGMA_Y
    reversed_local = Operator(space.subspace(["c", "a"]), np.kron(c_op, a_op))
    expected = np.kron(np.kron(a_op, np.eye(2)), c_op)
    assert np.allclose(embed_operator(reversed_local, space).entries, expected)


@given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_embedding_composes(seed_a, seed_b):
    space = make_space([("a", ["0", "1"]), ("b", ["x", "y", "z"])])
    a = random_hermitian(2, seed_a)
    b = random_hermitian(3, seed_b)
    ea = embed_operator(Operator(space.subspace(["a"]), a), space)
    eb = embed_operator(Operator(space.subspace(["b"]), b), space)
    joint = embed_operator(Operator(space.subspace(["a", "b"]), np.kron(a, b)), space)
    assert np.allclose((ea @ eb).entries, joint.entries)


def test_embed_rejects_mismatched_labels():
    space = make_space([("a", ["0", "1"]), ("b", ["0", "1"])])
    local = Operator(make_space([("b", ["u", "d"])]), SIGMA_X)
    with pytest.raises(SpaceMismatchError):
        embed_operator(local, space)
    with pytest.raises(SpaceError):
        embed_operator(Operator(make_space([("z", ["0", "1"])]), SIGMA_X), space)


def test_matrix_element_conjugates_bra():
    space = make_space([("a", ["0", "1"])])
    h = Operator(space, SIGMA_Y, hermitian=True)
    zero, one = basis_state(space, {"a": "0"}), basis_state(space, {"a": "1"})
    assert matrix_element(one, h, zero) == pytest.approx(1j)
    assert matrix_element(zero, h, one) == pytest.approx(-1j)


def test_project_keeps_matching_amplitudes(qubit_qutrit):
    psi = StateVector(qubit_qutrit, random_state(6, 3))
    kept = project(psi, {"a": "1"})
    assert np.allclose(kept.amplitudes[:3], 0.0)
    assert np.allclose(kept.amplitudes[3:], psi.amplitudes[3:])
    both = project(psi, {"a": "0", "b": "z"})
    assert np.count_nonzero(both.amplitudes) == 1


def test_is_unitary():
    assert is_unitary(SIGMA_X)
    assert not is_unitary(2 * SIGMA_X)
    assert not is_unitary(np.ones((2, 3)))


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 10.0))
def test_evolution_preserves_norm(seed, t):
    space = make_space([("a", ["0", "1"]), ("b", ["x", "y", "z"])])
    h = Operator(space, random_hermitian(6, seed), hermitian=True)
    psi = StateVector(space, random_state(6, seed + 1))
    assert evolve_unitary(h, t, psi).norm_sq() == pytest.approx(1.0, abs=1e-10)


def test_evolution_matches_rotation():
    space = make_space([("a", ["0", "1"])])
    h = Operator(space, SIGMA_Y, hermitian=True)
    psi = basis_state(space, {"a": "0"})
    out = evolve_unitary(h, math.pi / 6, psi)
    # exp(-i sigma_y t)|0> = cos t |0> + sin t |1>
    assert np.allclose(out.amplitudes, [math.cos(math.pi / 6), math.sin(math.pi / 6)])


def test_evolve_unitary_edge_cases():
    space = make_space([("a", ["0", "1"])])
    h = Operator(space, SIGMA_X, hermitian=True)
    psi = basis_state(space, {"a": "0"})
    assert evolve_unitary(h, 0.0, psi) is psi
    with pytest.raises(ValueError):
        evolve_unitary(h, -1.0, psi)
    with pytest.raises(NonHermitianError):
        evolve_unitary(Operator(space, SIGMA_X), 1.0, psi)


def test_propagator_batch_matches_single_times():
    space = make_space([("a", ["0", "1"]), ("b", ["x", "y", "z"])])
    prop = Propagator(Operator(space, random_hermitian(6, 7), hermitian=True))
    amps = random_state(6, 8)
    coeffs = prop.coefficients(amps)
    times = np.array([0.0, 0.3, 1.7])
    batch = prop.states_at(coeffs, times)
    assert batch.shape == (3, 6)
    for t, row in zip(times, batch):
        assert np.allclose(row, prop.evolve(amps, float(t)))
    assert np.allclose(batch[0], amps)


def test_propagator_needs_hermitian_flag():
    space = make_space([("a", ["0", "1"])])
    with pytest.raises(NonHermitianError):
        Propagator(Operator(space, SIGMA_X))


@given(st.floats(0.0, 2 * math.pi))
def test_global_phase_distance_ignores_phase(phi):
    space = make_space([("a", ["0", "1"]), ("b", ["x", "y", "z"])])
    psi = StateVector(space, random_state(6, 11))
    assert global_phase_distance(psi * np.exp(1j * phi), psi) < 1e-12
