import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hlmetro.exact_engine import evolve
from hlmetro.initial_states import make_ghz
from hlmetro.locc import (X_BASIS, BisectionResult, ExactBasisProvider, FixedBasisProvider, MeasurementRecord,
                          QubitBasis, adaptive_measure, bisection_call_budget, estimate_omega, outcome_distribution,
                          parity_expectation, phase_shifted_state, povm_completeness, verify_basis_condition,
                          zero_diagonalize)
from hlmetro.metrology import PriorInterval
from hlmetro.pauli_graph import ising_chain

_unit = st.floats(-1, 1, allow_nan=False)
_P = [np.array(m, dtype=complex) for m in ([[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]])]


def _herm(v):
    return sum(c * p for c, p in zip(v, _P))


@settings(max_examples=60, deadline=None)
@given(st.lists(_unit, min_size=3, max_size=3), st.lists(_unit, min_size=3, max_size=3))
def test_zero_diagonalization_property(a, b):
    A, B = _herm(a), _herm(b)
    if max(np.abs(a).max(), np.abs(b).max()) < 1e-3:
        return
    basis = zero_diagonalize(A, B)
    for M in (A, B):
        for e in (basis.e0, basis.e1):
            assert abs(np.vdot(e, M @ e)) < 1e-9 * max(1.0, np.abs(M).max())
    assert abs(np.vdot(basis.e0, basis.e1)) < 1e-12


def test_sign_selector_swaps_labels():
    A = _herm([0, 0, 1.0])
    Mt = np.array([[0, 0.3j], [0.1, 0]])
    B = Mt + Mt.conj().T
    b_plus = zero_diagonalize(A, B, 1, Mt)
    b_minus = zero_diagonalize(A, B, -1, Mt)
    assert np.vdot(b_plus.e0, Mt @ b_plus.e0).imag > 0
    assert np.vdot(b_minus.e0, Mt @ b_minus.e0).imag < 0


def test_record_parity_and_next():
    r = MeasurementRecord((1, 0, 1), (X_BASIS,) * 3, (2, 0, 1, 3))
    assert r.parity == 1
    assert r.next_qubit() == 3


def test_basis_condition_and_povm():
    n, t = 4, 1.0
    H = ising_chain(n, 0.1, 0.9)
    prior = PriorInterval.around(0.9, n, t)
    prov = ExactBasisProvider.from_hamiltonian(make_ghz(n), H, t, prior.omega_prime)
    assert verify_basis_condition(prov, (prov.phi0, prov.phi1)) < 1e-10
    assert povm_completeness(prov) < 1e-12


def test_parity_frozen():
    n, t = 4, 1.0
    H = ising_chain(n, 0.1, 0.9)
    prior = PriorInterval.around(0.9, n, t)
    prov = ExactBasisProvider.from_hamiltonian(make_ghz(n), H, t, prior.omega_prime)
    # frozen: <P> on the true state at omega = 0.9
    assert parity_expectation(prov, evolve(make_ghz(n).combined(), H, t)) == pytest.approx(0.6060889851110864, abs=1e-10)


def test_shifted_state_identity():
    n, t = 4, 1.0
    H = ising_chain(n, 0.1, 0.9)
    prior = PriorInterval.around(0.9, n, t)
    prov = ExactBasisProvider.from_hamiltonian(make_ghz(n), H, t, prior.omega_prime)
    P0 = parity_expectation(prov, phase_shifted_state(prov.phi0, prov.phi1, 0.0))
    for f in (-1.2, 0.3, 1.5):
        Pf = parity_expectation(prov, phase_shifted_state(prov.phi0, prov.phi1, f))
        assert Pf - P0 == pytest.approx(-math.sin(f), abs=1e-10)


def test_adaptive_sampling_matches_distribution():
    n = 3
    prov = FixedBasisProvider(n, X_BASIS)
    psi = evolve(make_ghz(n).combined(), ising_chain(n, 0.2, 0.7), 0.9)
    p = outcome_distribution(prov, psi)
    rng = np.random.default_rng(5)
    counts = np.zeros(2**n)
    for _ in range(4000):
        rec = adaptive_measure(psi, prov, rng)
        counts[int("".join(map(str, rec.outcomes)), 2)] += 1
    assert np.abs(counts / 4000 - p).sum() < 0.08


def test_bisection_budget_and_readout():
    prior = PriorInterval.around(0.9, 4, 1.0)
    slope = 2 * 4 * 1.0
    f = lambda w: slope * (w - prior.omega_prime)  # noqa: E731
    w_true = prior.omega_prime + 0.1 * prior.half_width
    tol = 1e-9
    res = estimate_omega(-math.sin(f(w_true)), 0.0, f, prior, tol)
    assert isinstance(res, BisectionResult)
    assert abs(res.omega - w_true) < tol
    assert res.calls <= bisection_call_budget(prior.hi - prior.lo, tol)


def test_from_axis_round_trip():
    ax = np.array([0.3, -0.4, 0.5])
    b = QubitBasis.from_axis(ax)
    assert np.allclose(b.axis, ax / np.linalg.norm(ax))
