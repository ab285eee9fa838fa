import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hlmetro.errors import StructureError, ValidationError
from hlmetro.pauli_graph import (PauliString, assemble_dense, assemble_sparse, build_graph, hamiltonian_from_dict,
                                 hamiltonian_to_dict, interaction_picture, ising_chain, local_strength,
                                 random_local_hamiltonian, transverse_field)

_axes = st.sampled_from("XYZ")


def test_pauli_product_phases():
    x = PauliString.make([(0, "X")])
    y = PauliString.make([(0, "Y")])
    assert (x * y).ops == ((0, "Z"),)
    assert (x * y).coeff == 1j
    assert (y * x).coeff == -1j


@settings(max_examples=40, deadline=None)
@given(st.lists(_axes, min_size=3, max_size=3), st.lists(_axes, min_size=3, max_size=3))
def test_product_matches_dense(a, b):
    p = PauliString.make(list(enumerate(a)))
    q = PauliString.make(list(enumerate(b)))
    assert np.allclose((p * q).dense(3), p.dense(3) @ q.dense(3))
    comm = p.dense(3) @ q.dense(3) - q.dense(3) @ p.dense(3)
    assert p.commutes(q) == np.allclose(comm, 0)


def test_label_parsing():
    assert PauliString.make("X0 Z3").ops == ((0, "X"), (3, "Z"))
    with pytest.raises(ValidationError):
        PauliString.make("X0 Z0")
    with pytest.raises(ValidationError):
        PauliString.make("Q1")


def test_graph_distances_and_errors():
    g = build_graph("ring", 6)
    assert g.distance(0, 3) == 3
    assert g.distance(0, 5) == 1
    assert build_graph("grid", 3, 2).max_degree == 3
    with pytest.raises(StructureError):
        build_graph("edges", 3, edges=[(0, 0)])
    with pytest.raises(StructureError):
        build_graph("edges", 3, edges=[(0, 5)])


def test_ising_ground_energy_frozen():
    # frozen: eigvalsh of the N=3, J=0.5, omega=0.9 chain
    H = ising_chain(3, 0.5, 0.9)
    assert np.linalg.eigvalsh(assemble_dense(H))[0] == pytest.approx(-2.8386977427286872, abs=1e-12)


def test_local_strength_of_chain_is_twice_coupling():
    assert ising_chain(6, 0.3, 1.0).local_strength == pytest.approx(0.6)
    assert transverse_field(4, 0.2, 1.0).local_strength == pytest.approx(0.2)
    assert local_strength([]) == 0.0


def test_sparse_equals_dense(rng):
    H = random_local_hamiltonian(build_graph("chain", 4), 0.3, 0.7, rng)
    assert np.allclose(assemble_sparse(H).toarray(), assemble_dense(H))


def test_interaction_picture_matches_rotation():
    H = ising_chain(3, 0.4, 0.8)
    t, s = 1.1, 0.35
    Hs = interaction_picture(H.terms, H.omega, t, 3)
    V = assemble_dense(H, include_field=False)
    z = np.diag(assemble_dense(H.with_omega(1.0)) - V)
    u = t - s
    rot = np.exp(-1j * H.omega * u * z)
    expected = (rot[:, None] * V) * rot.conj()[None, :]
    assert np.allclose(Hs.dense(s), expected)
    assert Hs.j_tilde == pytest.approx(0.4)


def test_dict_round_trip(rng):
    H = random_local_hamiltonian(build_graph("chain", 3), 0.5, 0.9, rng)
    H2 = hamiltonian_from_dict(hamiltonian_to_dict(H))
    assert np.allclose(assemble_dense(H), assemble_dense(H2))
    with pytest.raises(ValidationError):
        hamiltonian_from_dict({"graph": {"kind": "chain", "n": 2}, "omega": 1, "bogus": 1})
