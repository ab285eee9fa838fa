"""Acceptance checks. Each test prints one PASS/FAIL line and then asserts."""
import math

import numpy as np
import pytest

from hlmetro.baselines import (naive_distribution, naive_distribution_dense, single_qubit_branches,
                               undo_protocol_expectation, undo_protocol_slope, undo_slope_bound)
from hlmetro.cluster_sampler import ClusterSampler, ExpansionEngine, SamplerParams, contour_coefficients, \
    correlation_profile
from hlmetro.exact_engine import basis_state, evolve, heisenberg_deviation, total_z
from hlmetro.harness import ExperimentConfig, run_procedure2, scaling_study
from hlmetro.initial_states import make_ghz
from hlmetro.locc import X_BASIS, ExactBasisProvider, FixedBasisProvider, estimate_omega, outcome_distribution, \
    parity_expectation, phase_shifted_state, verify_basis_condition
from hlmetro.metrology import PhaseFunction, PriorInterval, qfi, qfi_finite_difference, theorem_slope_interval
from hlmetro.mps_backend import MpsBasisProvider, evolve_mps, fidelity, mps_ghz
from hlmetro.pauli_graph import build_graph, interaction_picture, ising_chain, random_local_hamiltonian


@pytest.fixture
def report(capsys):
    def _report(label: str, ok: bool, detail: str = ""):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {label}: {detail}")
        return ok
    return _report


def test_01_ideal_heisenberg_limit(report):
    cfg = ExperimentConfig(hamiltonian={"model": "none"}, protocol="ideal", N=(2, 4, 6, 8), t=1.0, M=10_000,
                           repeats=200, seed=1)
    res = run_procedure2(cfg)
    ratios = {r.N: r.delta_omega_empirical / r.hl_reference for r in res.rows}
    slowest = max(r.wall_time for r in res.rows)
    ok = all(abs(x - 1) <= 0.25 for x in ratios.values()) and slowest < 60
    report("1 ideal HL", ok, f"dw/HL {ratios}, slowest N {slowest:.1f}s")
    assert ok


def test_02_qfi_formula(report):
    worst_ideal = 0.0
    for n in range(1, 11):
        v = qfi(make_ghz(n).combined(), ising_chain(n, 0.0, 0.9), 1.0).value
        worst_ideal = max(worst_ideal, abs(v / (4 * n * n) - 1))
    rng = np.random.default_rng(7)
    worst_fd = 0.0
    for n in (2, 3, 4, 5, 6):
        for _ in range(3):
            H = random_local_hamiltonian(build_graph("chain", n), 0.1, 0.8 + 0.4 * rng.random(), rng)
            psi = make_ghz(n).combined()
            exact = qfi(psi, H, 1.0).value
            worst_fd = max(worst_fd, abs(qfi_finite_difference(psi, H, 1.0) / exact - 1))
    ok = worst_ideal <= 1e-6 and worst_fd <= 1e-4
    report("2 QFI formula", ok, f"ideal rel err {worst_ideal:.1e}, finite-difference rel err {worst_fd:.1e}")
    assert ok


def test_03_theorem_bounds(report):
    t, omega = 1.0, 0.9
    slope_ok = True
    deficits = {"coupling": [], "local": []}
    ns = (4, 6, 8, 10)
    for jt in (0.05, 0.1, 0.2):
        for n in ns:
            H = ising_chain(n, jt / t, omega)
            prior = PriorInterval.around(omega, n, t)
            pf = PhaseFunction(make_ghz(n), H, t, prior)
            lo, hi = theorem_slope_interval(1.0, H.local_strength, t, n)
            for w in np.linspace(prior.lo, prior.hi, 5):
                s = pf.slope(w)
                slope_ok &= lo * 0.98 <= s <= hi * 1.02
            F = qfi(make_ghz(n).combined(), H, t).value
            for key, J in (("coupling", jt / t), ("local", H.local_strength)):
                deficits[key].append((4 * t * t * n * n * (1 - J * t) ** 2 - F) / n**1.5)
    c_hat = {k: max(0.0, max(v)) for k, v in deficits.items()}
    # one constant per interpretation; with it the bound holds at every N by construction,
    # so the observed value itself is recorded: the exact QFI never falls below the leading term
    ok = slope_ok and c_hat["coupling"] == 0.0 and c_hat["local"] == 0.0
    report("3 slope interval and QFI bound", ok, f"slopes in interval {slope_ok}, fitted c {c_hat}")
    assert ok


def test_04_basis_condition(report):
    worst = 0.0
    for n in range(1, 7):
        for J in (0.0, 0.1):
            H = ising_chain(n, J, 0.9)
            prior = PriorInterval.around(0.9, n, 1.0)
            prov = ExactBasisProvider.from_hamiltonian(make_ghz(n), H, 1.0, prior.omega_prime)
            worst = max(worst, verify_basis_condition(prov, (prov.phi0, prov.phi1)))
    ok = worst <= 1e-8
    report("4 basis condition", ok, f"max residual {worst:.1e}")
    assert ok


def test_05_parity_identity(report):
    worst = 0.0
    t = 1.0
    for n in range(2, 7):
        H = ising_chain(n, 0.1, 0.9)
        prior = PriorInterval.around(0.9, n, t)
        prov = ExactBasisProvider.from_hamiltonian(make_ghz(n), H, t, prior.omega_prime)
        pf = PhaseFunction(make_ghz(n), H, t, prior)
        p_prime = parity_expectation(prov, phase_shifted_state(prov.phi0, prov.phi1, 0.0))
        for w in np.linspace(prior.lo, prior.hi, 7):
            f = pf.evaluate(w)
            p_w = parity_expectation(prov, phase_shifted_state(prov.phi0, prov.phi1, f))
            worst = max(worst, abs(p_w - p_prime + math.sin(f)))
    ok = worst <= 1e-6
    report("5 parity identity", ok, f"max deviation {worst:.1e}")
    assert ok


def test_06_perturbed_scaling(report):
    cfg = ExperimentConfig(hamiltonian={"model": "ising_chain", "J": 0.1}, N=(4, 6, 8), t=1.0, M=10_000,
                           repeats=200, seed=1)
    _, fit = scaling_study(cfg)
    ok = fit.exponent <= -0.85
    report("6 perturbed HL scaling", ok, f"exponent {fit.exponent:.3f} CI [{fit.ci_low:.3f}, {fit.ci_high:.3f}]")
    assert ok


def test_07_cluster_sampler(report):
    n, w = 5, 0.9
    H = ising_chain(n, 1.0, w)
    Hs = interaction_picture(H.terms, w, 1.0, n)
    t = 0.3 * SamplerParams.for_hamiltonian(Hs, 1 / math.sqrt(2), 8).t_star
    prov = FixedBasisProvider(n, X_BASIS)
    cs = ClusterSampler(H, t, prov, c_m=1 / math.sqrt(2), order=8)
    tv = float(np.abs(cs.distribution() - outcome_distribution(prov, evolve(basis_state([0] * n), H, t))).sum())
    cs.draw(np.random.default_rng(0), audit=True)
    x = t / cs.params.t_star
    bound_ok = all(abs(complex(*c)) <= m * x**m * (1 + 1e-9)
                   for a in cs.audit for m, c in enumerate(a["series"]["coefficients"], start=1))
    worst_oracle = 0.0
    for n4, J in ((3, 0.4), (4, 0.3)):
        Hn = ising_chain(n4, J, w)
        t4 = 0.7
        Hs4 = interaction_picture(Hn.terms, w, t4, n4)
        params = SamplerParams.for_hamiltonian(Hs4, 1 / math.sqrt(2), 5)
        eng = ExpansionEngine(Hs4, t4, params, 5, allow_unsafe=True)
        prefix = [(0, X_BASIS.e1)]
        rho = eng.reduced_series(prefix, 1)
        reg = np.einsum("i,mij,j->m", X_BASIS.e0.conj(), rho, X_BASIS.e0)
        cont = contour_coefficients(Hs4, prefix, 1, X_BASIS, t4, 5)
        worst_oracle = max(worst_oracle, float(np.abs(reg - cont).max()))
    ok = tv <= 1e-3 and bound_ok and worst_oracle <= 1e-8
    report("7 cluster sampler", ok, f"TV {tv:.1e}, gamma bound held {bound_ok}, oracle gap {worst_oracle:.1e}")
    assert ok


def test_08_correlation_decay(report):
    H = ising_chain(10, 0.1, 0.1)
    prefix = [(q, X_BASIS.e0) for q in (3, 4, 5)]
    prof = correlation_profile((H, 1.0), 0, prefix, H.graph.distance)
    cor_end = prof["rows"][-1][2]
    ok = prof["slope"] < 0 and prof["r2"] >= 0.9 and cor_end <= 1e-4
    report("8 correlation decay", ok, f"slope {prof['slope']:.3f}, R2 {prof['r2']:.3f}, Cor(1,10) {cor_end:.1e}")
    assert ok


def test_09_mps_backend(report):
    n, t = 10, 1.0
    H = ising_chain(n, 0.1, 0.9)
    prior = PriorInterval.around(0.9, n, t)
    mp = MpsBasisProvider.from_hamiltonian(H, t, prior.omega_prime)
    ex = ExactBasisProvider.from_hamiltonian(make_ghz(n), H, t, prior.omega_prime)
    psi = evolve(make_ghz(n).combined(), H, t)
    tv = float(np.abs(outcome_distribution(mp, psi) - outcome_distribution(ex, psi)).sum())
    worst_fid = 1.0
    for m in (4, 8, 12):
        Hm = ising_chain(m, 0.1, 0.9)
        st = evolve_mps(mps_ghz(m), Hm, t, order=4, cutoff=1e-14)
        worst_fid = min(worst_fid, fidelity(st, evolve(make_ghz(m).combined(), Hm, t)))
    ok = tv <= 1e-6 and worst_fid >= 1 - 1e-6
    report("9 MPS backend", ok, f"TV {tv:.1e}, min fidelity 1-{1 - worst_fid:.1e}")
    assert ok


def test_10_naive_baseline(report):
    worst_dense, worst_identity, worst_le, worst_cos = 0.0, 0.0, 0.0, 0.0
    omega, J, t = 0.9, 0.7, 1.6
    plus, minus = np.array([1, 1]) / math.sqrt(2), np.array([1, -1]) / math.sqrt(2)
    for n in range(1, 9):
        d = naive_distribution(n, omega, J, t)
        p, q = d.expand()
        pd, qd, coh = naive_distribution_dense(n, omega, J, t)
        worst_dense = max(worst_dense, abs(np.abs(pd - qd).sum() - d.l1_distance()))
        worst_identity = max(worst_identity, abs(coh - d.bound()), abs(d.coherence_l1() - d.bound()))
        worst_le = max(worst_le, d.l1_distance() - d.bound())
    for n in (10, 16, 20):
        d = naive_distribution(n, omega, J, t)
        worst_identity = max(worst_identity, abs(d.coherence_l1() - d.bound()))
        phi0, _ = single_qubit_branches(omega, J, t)
        theta = np.angle(np.vdot(plus, phi0) * np.vdot(minus, phi0))
        worst_cos = max(worst_cos, abs(d.l1_distance() - d.bound() * abs(math.cos(n * theta))))
    cfg = ExperimentConfig(hamiltonian={"model": "transverse_field", "J": J}, protocol="naive", N=(4, 8, 12, 16, 20),
                           t=t, omega_true=omega, M=10_000, repeats=200, seed=3)
    _, fit = scaling_study(cfg)
    ok = (worst_identity <= 1e-10 and worst_dense <= 1e-10 and worst_le <= 1e-12 and worst_cos <= 1e-10
          and abs(fit.exponent + 0.5) <= 0.15)
    report("10 naive baseline", ok,
           f"coherence sum = f^N to {worst_identity:.1e}, dense gap {worst_dense:.1e}, "
           f"l1 - f^N max {worst_le:.1e}, l1 = f^N|cos N theta| to {worst_cos:.1e}, exponent {fit.exponent:.3f}")
    assert ok


def test_11_undo_protocol(report):
    worst_ratio = 0.0
    slope_ok = True
    checked = 0
    for n in (2, 4, 6):
        for t in (0.5, 1.0, 2.0):
            for J in (0.0, 0.05, 0.1, 0.15, 0.2):
                H = ising_chain(n, J, 0.9)
                prior = PriorInterval.around(0.9, n, t)
                for off in np.linspace(-0.9, 0.9, 5):
                    w = prior.omega_prime + off * prior.half_width
                    val = undo_protocol_expectation(H, w, prior.omega_prime, t, check=False)
                    dev = abs(val - math.cos(2 * n * w * t))
                    if J > 0:
                        worst_ratio = max(worst_ratio, dev / (math.pi * J * t / 2))
                    elif dev > 1e-10:
                        worst_ratio = math.inf
                    rhs = undo_slope_bound(n, w, J, t)
                    if rhs > 0:
                        checked += 1
                        slope = undo_protocol_slope(H, w, prior.omega_prime, t, check=False)
                        slope_ok &= slope >= rhs - 1e-6 * n * t
    ok = worst_ratio <= 1 and slope_ok and checked > 0
    report("11 undo protocol", ok, f"max deviation/(pi J t/2) {worst_ratio:.3f}, slope bound held at {checked} points")
    assert ok


def test_12_energy_conservation(report):
    n = 4
    z = total_z(n)
    worst = 0.0
    for J in (0.05, 0.1, 0.2, 0.3):
        for omega in (0.7, 0.9, 1.5, 3.0):
            H = ising_chain(n, J, omega)
            if not 2 * H.local_strength < omega:
                continue
            for s in (0.3, 1.0, 5.0, 50.0):
                worst = max(worst, heisenberg_deviation(H, z, s) / (2 * n * H.local_strength / omega))
    ok = worst <= 1
    report("12 energy conservation", ok, f"max ||Z(s)-Z|| / (2NJ/omega) {worst:.3f}")
    assert ok


def test_13_bisection_budget(report):
    rng = np.random.default_rng(13)
    worst_margin = -math.inf
    for _ in range(100):
        n = int(rng.integers(2, 20))
        t = float(rng.uniform(0.3, 2.0))
        prior = PriorInterval.around(float(rng.uniform(0.2, 3.0)), n, t)
        a = 2 * n * t * rng.uniform(0.5, 1.0)
        b = rng.uniform(0, 5) * a / prior.half_width**2
        calls = [0]

        def f(w, a=a, b=b, c=calls):
            c[0] += 1
            x = w - prior.omega_prime
            return a * x + b * x**3

        tol = prior.half_width * 10 ** rng.uniform(-12, -2)
        w_true = prior.omega_prime + rng.uniform(-1, 1) * prior.half_width
        fw = a * (w_true - prior.omega_prime) + b * (w_true - prior.omega_prime) ** 3
        res = estimate_omega(-math.sin(max(-1.5, min(1.5, fw))), 0.0, f, prior, tol)
        budget = math.ceil(math.log2((prior.hi - prior.lo) / tol)) + 2
        assert res.calls == calls[0]
        worst_margin = max(worst_margin, calls[0] - budget)
    ok = worst_margin <= 0
    report("13 bisection budget", ok, f"max calls minus budget {worst_margin}")
    assert ok
