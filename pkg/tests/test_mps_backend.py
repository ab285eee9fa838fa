import numpy as np
import pytest

from hlmetro.errors import ValidationError
from hlmetro.exact_engine import evolve
from hlmetro.initial_states import make_ghz
from hlmetro.locc import ExactBasisProvider, outcome_distribution
from hlmetro.metrology import PriorInterval
from hlmetro.mps_backend import (MpsBasisProvider, canonicalize, contract_string_expectation, dumps_mps, evolve_mps,
                                 fidelity, gauge_transform, loads_mps, mps_from_dense, mps_ghz,
                                 mps_outcome_distribution, random_mps, sample_mps)
from hlmetro.pauli_graph import PauliString, ising_chain


def test_checkpoint_round_trip_is_bit_exact(rng):
    a = random_mps(5, 3, rng)
    b = loads_mps(dumps_mps(a))
    assert all(np.array_equal(x, y) for x, y in zip(a.tensors, b.tensors))
    text = dumps_mps(a).replace("tensor 0", "tensor 0 ", 1)
    with pytest.raises(ValidationError):
        loads_mps(text)


def test_gauge_invariance(rng):
    a = random_mps(5, 3, rng)
    g = gauge_transform(a, rng)
    assert fidelity(g, a.to_dense()) == pytest.approx(1.0, abs=1e-12)


def test_canonical_form_is_idempotent(rng):
    a = random_mps(6, 4, rng)
    c1 = canonicalize(a, 2)
    c2 = canonicalize(c1, 2)
    assert max(np.abs(x - y).max() for x, y in zip(c1.tensors, c2.tensors)) < 1e-10


def test_string_expectation_matches_dense(rng):
    psi = rng.normal(size=16) + 1j * rng.normal(size=16)
    psi /= np.linalg.norm(psi)
    m = mps_from_dense(psi)
    p = PauliString.make("X0 Y2 Z3")
    assert contract_string_expectation(m, m, p) == pytest.approx(np.vdot(psi, p.apply(psi, 4)), abs=1e-12)


def test_evolution_fidelity():
    n = 8
    H = ising_chain(n, 0.1, 0.9)
    st = evolve_mps(mps_ghz(n), H, 1.0, order=4, cutoff=1e-14)
    assert fidelity(st, evolve(make_ghz(n).combined(), H, 1.0)) > 1 - 1e-8


def test_provider_matches_exact_and_sampler():
    n, t = 6, 1.0
    H = ising_chain(n, 0.1, 0.9)
    prior = PriorInterval.around(0.9, n, t)
    mp = MpsBasisProvider.from_hamiltonian(H, t, prior.omega_prime)
    ex = ExactBasisProvider.from_hamiltonian(make_ghz(n), H, t, prior.omega_prime)
    psi = evolve(make_ghz(n).combined(), H, t)
    assert np.abs(outcome_distribution(mp, psi) - outcome_distribution(ex, psi)).sum() < 1e-6
    st = evolve_mps(mps_ghz(n), H, t, order=4, cutoff=1e-14)
    p = mps_outcome_distribution(st, mp)
    assert np.abs(p - outcome_distribution(mp, psi)).sum() < 1e-6
    rng = np.random.default_rng(3)
    counts = np.zeros(2**n)
    for _ in range(2000):
        r = sample_mps(st, mp, rng)
        counts[int("".join(map(str, r.outcomes)), 2)] += 1
    assert np.abs(counts / 2000 - p).sum() < 0.2
