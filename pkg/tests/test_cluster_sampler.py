import math

import numpy as np
import pytest
from scipy.integrate import dblquad

from hlmetro.cluster_sampler import (Cluster, ClusterBasisProvider, ClusterSampler, ClusterSeries, ExpansionEngine,
                                     SamplerParams, cluster_route_coefficients, contour_coefficients,
                                     default_order, enumerate_clusters, marginal_expansion, series_ratio,
                                     simplex_integral, tail_bound, term_overlap_graph)
from hlmetro.errors import DomainError, NumericalAssertionError
from hlmetro.exact_engine import basis_state, evolve
from hlmetro.initial_states import make_ghz
from hlmetro.locc import X_BASIS, ExactBasisProvider, FixedBasisProvider, outcome_distribution
from hlmetro.metrology import PriorInterval
from hlmetro.pauli_graph import interaction_picture, ising_chain


def test_simplex_integral_against_quadrature():
    z1, z2, t = 1.3j, -0.7j, 0.9
    re = dblquad(lambda s2, s1: np.exp(z1 * s1 + z2 * s2).real, 0, t, 0, lambda s1: s1)[0]
    im = dblquad(lambda s2, s1: np.exp(z1 * s1 + z2 * s2).imag, 0, t, 0, lambda s1: s1)[0]
    assert abs(simplex_integral([z1, z2], t) - (re + 1j * im)) < 1e-10
    assert simplex_integral([0.0, 0.0, 0.0], 2.0) == pytest.approx(2.0**3 / 6)
    z = 0.4j
    assert simplex_integral([z], 1.5) == pytest.approx((np.exp(1.5 * z) - 1) / z)


def test_series_ratio_inverts_product():
    a = np.array([1.0, 0.5, -0.2, 0.1])
    b = np.array([2.0, 0.3, 0.0, 0.4])
    prod = np.convolve(a, b)[:4]
    assert np.allclose(series_ratio(prod, b), a)


def test_t_star_frozen():
    H = ising_chain(5, 1.0, 0.9)
    Hs = interaction_picture(H.terms, 0.9, 1.0, 5)
    p = SamplerParams.for_hamiltonian(Hs, 1 / math.sqrt(2), 8)
    assert (p.frak_d, p.k, p.j_tilde) == (11, 2, 1.0)
    # frozen: [4 e^2 2^2 * 11 * 12]^{-1}
    assert p.t_star == pytest.approx(6.407920607794158e-05, rel=1e-12)
    with pytest.raises(DomainError):
        SamplerParams(0.9, 2, 11, 1.0)


def test_tail_bound_closed_form():
    x, order = 0.3, 5
    direct = sum(m * x**m for m in range(order + 1, 400))
    assert tail_bound(x, 1.0, order) == pytest.approx(direct, rel=1e-12)
    assert default_order(0.3, 1.0, 1e-6) >= 1


def test_cluster_enumeration_counts():
    H = ising_chain(4, 1.0, 0.9)
    dual = term_overlap_graph(H.terms)
    assert len(enumerate_clusters(dual, 1)) == 3
    two = enumerate_clusters(dual, 2)
    assert len(two) == 5 and all(c.size == 2 for c in two)
    assert Cluster(((0, 2),)).expanded() == (0, 0)


def test_bound_check_raises():
    s = ClusterSeries(0.5, np.array([10.0]), 1.0, 2.0)
    with pytest.raises(NumericalAssertionError):
        s.check_bound()


def test_region_route_matches_oracles():
    n, J, w, t = 4, 0.3, 0.9, 0.7
    H = ising_chain(n, J, w)
    Hs = interaction_picture(H.terms, w, t, n)
    params = SamplerParams.for_hamiltonian(Hs, 1 / math.sqrt(2), 5)
    eng = ExpansionEngine(Hs, t, params, 5, allow_unsafe=True)
    prefix = [(0, X_BASIS.e1), (1, X_BASIS.e0)]
    rho = eng.reduced_series(prefix, 2)
    reg = np.einsum("i,mij,j->m", X_BASIS.e0.conj(), rho, X_BASIS.e0)
    cont = contour_coefficients(Hs, prefix, 2, X_BASIS, t, 5)
    assert np.abs(reg - cont).max() < 1e-8
    cl = cluster_route_coefficients(prefix, 2, X_BASIS, Hs, t, 2)
    assert np.abs(reg[:3] - cl).max() < 1e-10


def test_sampler_within_t_star():
    n, w = 5, 0.9
    H = ising_chain(n, 1.0, w)
    Hs = interaction_picture(H.terms, w, 1.0, n)
    t = 0.3 * SamplerParams.for_hamiltonian(Hs, 1 / math.sqrt(2), 8).t_star
    prov = FixedBasisProvider(n, X_BASIS)
    cs = ClusterSampler(H, t, prov, c_m=1 / math.sqrt(2), order=8)
    p = cs.distribution()
    pe = outcome_distribution(prov, evolve(basis_state([0] * n), H, t))
    assert np.abs(p - pe).sum() < 1e-10
    with pytest.raises(DomainError):
        ClusterSampler(H, 1.0, prov)
    rec = cs.draw(np.random.default_rng(0), audit=True)
    assert len(rec.outcomes) == n and len(cs.audit) == n


def test_marginal_expansion_is_probability():
    n, w = 4, 0.9
    H = ising_chain(n, 1.0, w)
    Hs = interaction_picture(H.terms, w, 1.0, n)
    params = SamplerParams.for_hamiltonian(Hs, 0.5, 6)
    s, p = marginal_expansion([(0, X_BASIS.e0)], 1, X_BASIS, Hs, 0.5 * params.t_star, params)
    assert 0 < p < 1
    assert s.order == 6


def test_cluster_provider_close_to_exact_beyond_t_star():
    n, t = 5, 1.0
    H = ising_chain(n, 0.05, 0.9)
    prior = PriorInterval.around(0.9, n, t)
    cp = ClusterBasisProvider(H, t, prior.omega_prime, series_order=8, allow_unsafe=True)
    ex = ExactBasisProvider.from_hamiltonian(make_ghz(n), H, t, prior.omega_prime)
    psi = evolve(make_ghz(n).combined(), H, t)
    assert np.abs(outcome_distribution(cp, psi) - outcome_distribution(ex, psi)).sum() < 1e-4
