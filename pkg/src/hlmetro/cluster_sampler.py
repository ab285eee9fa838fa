"""Cluster-expansion sampler for short-time evolved product states under one-qubit-at-a-time measurement.

Marginals p(0 | x_1..x_n) are expanded in powers of a coupling scale lambda
(H -> lambda H), evaluated at lambda = 1. The order-m coefficient collects every
connected cluster of m Hamiltonian terms; gamma_m is that coefficient divided
by t^m. Two routes compute the coefficients:

* the region route propagates the Dyson series of the branch states on the
  ball of terms that a connected cluster of size <= order can reach, with all
  Fourier phases carried by an integer frequency tag, and
* the cluster route sums connected multisets explicitly, inverting the ratio
  over the sub-multiset lattice. It is exponential in the order and is kept
  for cross-checks.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass
from itertools import permutations, product
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import expm_multiply

from .errors import DegenerateBranchError, DomainError, NumericalAssertionError, ValidationError
from .exact_engine import ZERO_WEIGHT, basis_state, evolve, n_qubits, project
from .locc import BasisProvider, MatrixPair, MeasurementRecord, QubitBasis, basis_from_pair
from .pauli_graph import (
    FourierTerm,
    PauliString,
    PerturbedHamiltonian,
    TimeDependentHamiltonian,
    interaction_picture,
)

log = logging.getLogger(__name__)

CLIP = 1e-12
_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


# ----------------------------------------------------------------------------
# operator space


@dataclass(frozen=True)
class OperatorVector:
    """An operator viewed as a vector with inner product (A|B) = Tr(A^dag B)."""

    matrix: np.ndarray

    def inner(self, other: "OperatorVector") -> complex:
        return complex(np.vdot(self.matrix, other.matrix))

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix))

    @staticmethod
    def product(factors: Sequence[np.ndarray]) -> "OperatorVector":
        m = np.ones((1, 1), dtype=complex)
        for f in factors:
            m = np.kron(m, f)
        return OperatorVector(m)


class Liouvillian:
    """L|O) = -i |[H, O]) for one Hermitian term H."""

    def __init__(self, H: np.ndarray):
        self.H = np.asarray(H, dtype=complex)

    def apply(self, op: OperatorVector) -> OperatorVector:
        O = op.matrix
        return OperatorVector(-1j * (self.H @ O - O @ self.H))

    def matrix(self) -> np.ndarray:
        """Superoperator in the row-major vec convention."""
        d = self.H.shape[0]
        eye = np.eye(d)
        return -1j * (np.kron(self.H, eye) - np.kron(eye, self.H.T))

    @property
    def norm_bound(self) -> float:
        return 2 * float(np.linalg.norm(self.H, 2))


# ----------------------------------------------------------------------------
# dual graph and clusters


def _support(term) -> frozenset:
    if isinstance(term, FourierTerm):
        return frozenset(term.pauli.support)
    if isinstance(term, PauliString):
        return frozenset(term.support)
    return frozenset(term.support)


@dataclass(frozen=True)
class DualGraph:
    """Terms as vertices; two terms are adjacent when their supports share a qubit."""

    supports: tuple
    adjacency: tuple

    @property
    def size(self) -> int:
        return len(self.supports)

    @property
    def frak_d(self) -> int:
        return max((len(a) for a in self.adjacency), default=0)

    @property
    def k(self) -> int:
        return max((len(s) for s in self.supports), default=0)

    def touching(self, qubit: int) -> list[int]:
        return [a for a, s in enumerate(self.supports) if qubit in s]

    def is_connected(self, indices) -> bool:
        idx = set(indices)
        if not idx:
            return False
        start = next(iter(idx))
        seen = {start}
        stack = [start]
        while stack:
            a = stack.pop()
            for b in self.adjacency[a]:
                if b in idx and b not in seen:
                    seen.add(b)
                    stack.append(b)
        return seen == idx

    def ball(self, seeds: Sequence[int], radius: int) -> set[int]:
        """Terms within ``radius`` dual-graph hops of ``seeds``."""
        out = set(seeds)
        frontier = set(seeds)
        for _ in range(radius):
            frontier = {b for a in frontier for b in self.adjacency[a]} - out
            out |= frontier
        return out


def term_overlap_graph(terms) -> DualGraph:
    sup = tuple(_support(t) for t in terms)
    adj = tuple(frozenset(b for b in range(len(sup)) if b != a and sup[a] & sup[b]) for a in range(len(sup)))
    return DualGraph(sup, adj)


@dataclass(frozen=True, order=True)
class Cluster:
    """A multiset of term indices, stored as sorted (index, multiplicity) pairs."""

    items: tuple

    @staticmethod
    def of(indices) -> "Cluster":
        counts: dict[int, int] = {}
        for a in indices:
            counts[a] = counts.get(a, 0) + 1
        return Cluster(tuple(sorted(counts.items())))

    @property
    def size(self) -> int:
        return sum(m for _, m in self.items)

    @property
    def indices(self) -> tuple:
        return tuple(a for a, _ in self.items)

    def expanded(self) -> tuple:
        return tuple(a for a, m in self.items for _ in range(m))

    def support(self, dual: DualGraph) -> frozenset:
        return frozenset().union(*(dual.supports[a] for a in self.indices)) if self.items else frozenset()

    def sub_multisets(self):
        ranges = [range(m + 1) for _, m in self.items]
        for mult in product(*ranges):
            yield Cluster(tuple((a, k) for (a, _), k in zip(self.items, mult) if k))

    def minus(self, other: "Cluster") -> "Cluster":
        d = dict(self.items)
        for a, k in other.items:
            d[a] -= k
        return Cluster(tuple((a, k) for a, k in sorted(d.items()) if k))


def _connected_sets(dual: DualGraph, max_size: int, seeds: Sequence[int] | None = None) -> set[frozenset]:
    """All connected vertex sets of size <= max_size (containing a seed, if seeds are given)."""
    starts = range(dual.size) if seeds is None else seeds
    found: set[frozenset] = set()
    frontier = {frozenset([a]) for a in starts}
    while frontier:
        found |= frontier
        nxt = set()
        for s in frontier:
            if len(s) >= max_size:
                continue
            for a in s:
                for b in dual.adjacency[a]:
                    if b not in s:
                        t = s | {b}
                        if t not in found:
                            nxt.add(t)
        frontier = nxt
    return found


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_clusters(dual: DualGraph, m: int, anchor: int | None = None) -> list[Cluster]:
    """Connected multisets of total multiplicity m, sorted canonically.

    With ``anchor`` set, only clusters containing a term that acts on that qubit.
    """
    if m < 1:
        raise ValidationError("cluster size must be >= 1")
    seeds = None if anchor is None else dual.touching(anchor)
    out = set()
    for s in _connected_sets(dual, m, seeds):
        idx = sorted(s)
        for mult in _compositions(m, len(idx)):
            out.add(Cluster(tuple(zip(idx, mult))))
    return sorted(out)


# ----------------------------------------------------------------------------
# parameters and bounds


@dataclass(frozen=True)
class SamplerParams:
    c_m: float
    k: int
    frak_d: int
    j_tilde: float
    order: int = 8

    def __post_init__(self):
        if not 0 < self.c_m <= 1 / math.sqrt(2) + 1e-12:
            raise DomainError(f"overlap floor c_m = {self.c_m} outside (0, 1/sqrt 2]")
        if self.k < 1 or self.frak_d < 0 or self.j_tilde <= 0:
            raise DomainError("need k >= 1, frak_d >= 0 and j_tilde > 0")

    @property
    def t_star(self) -> float:
        return t_star(self)

    @staticmethod
    def for_hamiltonian(Hs: TimeDependentHamiltonian, c_m: float, order: int = 8) -> "SamplerParams":
        dual = term_overlap_graph(Hs.terms)
        return SamplerParams(c_m, max(dual.k, 1), dual.frak_d, Hs.j_tilde, order)


def t_star(params: SamplerParams) -> float:
    """[4 e^2 c_m^{-2k} d(d+1) J~]^{-1}, with d(d+1) -> 1 for an edgeless dual graph."""
    dd = params.frak_d * (params.frak_d + 1)
    if dd == 0:
        warnings.warn("no overlapping terms: using d(d+1) = 1 in t_star", stacklevel=2)
        dd = 1
    return 1.0 / (4 * math.e**2 * params.c_m ** (-2 * params.k) * dd * params.j_tilde)


def tail_bound(t: float, t_star_: float, order: int) -> float:
    """sum_{m > order} m (t/t*)^m."""
    x = t / t_star_
    if x >= 1:
        return math.inf
    # closed form of the tail of sum m x^m
    n = order + 1
    return x**n * (n - (n - 1) * x) / (1 - x) ** 2


def default_order(t: float, t_star_: float, tol: float, max_order: int = 40) -> int:
    """Smallest M with M (t/t*)^{M+1} / (1 - t/t*) below tol."""
    x = t / t_star_
    if x >= 1:
        raise DomainError("t >= t_star: the series has no certified truncation")
    for m in range(1, max_order + 1):
        if m * x ** (m + 1) / (1 - x) < tol:
            return m
    return max_order


def simplex_integral(rates: Sequence[complex], t: float) -> complex:
    """int_{t > s_1 > ... > s_m > 0} prod_j exp(rates[j] s_j) ds.

    Equals the divided difference of x -> exp(x t) at the partial sums
    0, r_1, r_1 + r_2, ...; evaluated as a corner of a bidiagonal matrix
    exponential, which stays accurate when partial sums coincide or vanish.
    """
    m = len(rates)
    if m == 0:
        return 1.0 + 0j
    nodes = np.concatenate([[0.0], np.cumsum(np.asarray(rates, dtype=complex))])
    A = np.diag(nodes) + np.diag(np.ones(m), 1)
    return complex(sla.expm(t * A)[0, m])


# ----------------------------------------------------------------------------
# series containers


@dataclass(frozen=True)
class ClusterSeries:
    """zeroth + sum_m coefficients[m-1] with coefficients[m-1] = gamma_m t^m."""

    zeroth: complex
    coefficients: np.ndarray
    t: float
    t_star: float
    route: str = "region"

    @property
    def order(self) -> int:
        return len(self.coefficients)

    @property
    def gammas(self) -> np.ndarray:
        m = np.arange(1, self.order + 1)
        return self.coefficients / self.t**m if self.t else np.zeros(self.order, dtype=complex)

    @property
    def value(self) -> complex:
        return complex(self.zeroth + self.coefficients.sum())

    @property
    def tail_bound(self) -> float:
        return tail_bound(self.t, self.t_star, self.order)

    def check_bound(self, slack: float = 1e-9) -> None:
        """Assert |gamma_m| <= m t*^{-m} (equivalently |coefficient_m| <= m (t/t*)^m)."""
        x = self.t / self.t_star
        for m, c in enumerate(self.coefficients, start=1):
            lim = m * x**m
            if abs(c) > lim * (1 + slack) + 1e-300:
                raise NumericalAssertionError(f"|gamma_{m}| t^{m} = {abs(c):.3e} exceeds bound {lim:.3e}")

    def to_dict(self) -> dict:
        def c(z):
            return [float(np.real(z)), float(np.imag(z))]

        return {"zeroth": c(self.zeroth), "coefficients": [c(z) for z in self.coefficients],
                "t": self.t, "t_star": self.t_star, "order": self.order, "route": self.route,
                "tail_bound": self.tail_bound}


def series_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """Power-series coefficients of num/den (leading axis is the order)."""
    num = np.asarray(num, dtype=complex)
    den = np.asarray(den, dtype=complex)
    if abs(den[0]) < 1e-300:
        raise DegenerateBranchError("denominator series vanishes at zeroth order")
    out = np.zeros_like(num)
    for m in range(len(num)):
        acc = num[m].copy()
        for j in range(1, m + 1):
            acc = acc - den[j] * out[m - j]
        out[m] = acc / den[0]
    return out


# ----------------------------------------------------------------------------
# region route


def _local_pauli(ops, local: dict, n: int) -> sp.csr_matrix:
    mask, phase = PauliString(tuple(sorted((local[q], a) for q, a in ops))).action(n)
    idx = np.arange(2**n)
    return sp.csr_matrix((phase, (idx ^ mask, idx)), shape=(2**n, 2**n))


class _Region:
    """Dyson coefficients of lambda-scaled evolution restricted to a set of terms."""

    def __init__(self, Hs: TimeDependentHamiltonian, terms: Sequence[int], extra_qubits: Sequence[int] = ()):
        qs = set(extra_qubits)
        for a in terms:
            qs |= set(Hs.terms[a].pauli.support)
        self.qubits = tuple(sorted(qs))
        self.local = {q: i for i, q in enumerate(self.qubits)}
        self.n = len(self.qubits)
        self.base = Hs.base
        self.terms = tuple(sorted(terms))
        dim = 2**self.n
        self.harm: dict[int, sp.csr_matrix] = {}
        for a in self.terms:
            term = Hs.terms[a]
            P = _local_pauli(term.pauli.ops, self.local, self.n)
            for k, c in term.harmonics:
                self.harm[k] = self.harm.get(k, sp.csr_matrix((dim, dim), dtype=complex)) + c * P
        self._cache: dict[tuple, np.ndarray] = {}

    def dyson(self, alpha: int, order: int, t: float) -> np.ndarray:
        """u[m] with U(lambda)|alpha...alpha> = sum_m lambda^m u[m] on the region."""
        key = (alpha, order, t)
        if key in self._cache:
            return self._cache[key]
        dim = 2**self.n
        psi0 = basis_state([alpha] * self.n)
        out = np.zeros((order + 1, dim), dtype=complex)
        out[0] = psi0
        if self.harm and order > 0 and t != 0:
            hmax = max(abs(k) for k in self.harm)
            kvals = np.arange(-order * hmax, order * hmax + 1)
            nk = len(kvals)
            # frequency-tagged blocks w[m, K]; v_m(s) = sum_K e^{i base K s} w[m, K](s)
            gen = sp.kron(sp.eye(order + 1), sp.kron(sp.diags(-1j * self.base * kvals), sp.eye(dim)))
            shift_m = sp.eye(order + 1, k=-1)
            for h, Hh in self.harm.items():
                gen = gen + sp.kron(shift_m, sp.kron(sp.eye(nk, k=-h), -1j * Hh))
            w0 = np.zeros((order + 1) * nk * dim, dtype=complex)
            k0 = int(np.searchsorted(kvals, 0))
            w0[k0 * dim:(k0 + 1) * dim] = psi0
            w = expm_multiply(t * sp.csr_matrix(gen), w0).reshape(order + 1, nk, dim)
            phases = np.exp(1j * self.base * kvals * t)
            out = np.einsum("k,mkd->md", phases, w)
        self._cache[key] = out
        return out


def _branch_blocks(ket: np.ndarray, bra: np.ndarray, n: int, record_pairs, target: int) -> np.ndarray:
    """B[m] = sum_j Tr_rest(X |ket_j><bra_{m-j}|) on ``target`` (local indices)."""
    order = ket.shape[0] - 1

    def reduce(vecs):
        out = []
        for v in vecs:
            tens, qs = project(v, record_pairs, n)
            ax = qs.index(target)
            out.append(np.moveaxis(tens, ax, 0).reshape(2, -1))
        return out

    K = reduce(ket)
    L = K if bra is ket else reduce(bra)
    B = np.zeros((order + 1, 2, 2), dtype=complex)
    for m in range(order + 1):
        for j in range(m + 1):
            B[m] += K[j] @ L[m - j].conj().T
    return B


def _as_pairs(prefix) -> list[tuple[int, np.ndarray]]:
    if isinstance(prefix, MeasurementRecord):
        return prefix.pairs()
    return [(int(q), np.asarray(e, dtype=complex)) for q, e in prefix]


def _check_floor(pairs, c_m: float, alpha: int = 0) -> None:
    for q, e in pairs:
        ov = abs(e[alpha]) / max(np.linalg.norm(e), 1e-300)
        if ov < c_m - 1e-12 or math.sqrt(max(0.0, 1 - ov**2)) < c_m - 1e-12:
            raise ValidationError(f"basis on qubit {q} violates the overlap floor c_m = {c_m}")


class ExpansionEngine:
    """Region-route series for the conditioned one-qubit matrices of a time-dependent model."""

    def __init__(self, Hs: TimeDependentHamiltonian, t: float, params: SamplerParams, order: int | None = None,
                 allow_unsafe: bool = False):
        self.Hs = Hs
        self.t = float(t)
        self.params = params
        self.order = params.order if order is None else int(order)
        self.dual = term_overlap_graph(Hs.terms)
        self.t_star = params.t_star
        if self.t >= self.t_star and not allow_unsafe:
            raise DomainError(f"t = {self.t:.3g} >= t_star = {self.t_star:.3g}; pass allow_unsafe for diagnostics")
        self.allow_unsafe = allow_unsafe
        self._regions: dict[object, _Region] = {}

    def region(self, target: int | None) -> _Region:
        """Ball of terms reachable by a connected cluster touching ``target``; None means the whole system."""
        if target in self._regions:
            return self._regions[target]
        if target is None:
            reg = _Region(self.Hs, range(len(self.Hs.terms)), range(self.Hs.n))
        else:
            seeds = self.dual.touching(target)
            terms = self.dual.ball(seeds, self.order - 1) if seeds else set()
            reg = _Region(self.Hs, terms, [target])
        self._regions[target] = reg
        return reg

    def reduced_series(self, prefix, target: int, alpha: int = 0) -> np.ndarray:
        """Series of the normalized conditioned density matrix of ``target`` in branch alpha."""
        pairs = _as_pairs(prefix)
        reg = self.region(target)
        local = [(reg.local[q], e) for q, e in pairs if q in reg.local]
        u = reg.dyson(alpha, self.order, self.t)
        B = _branch_blocks(u, u, reg.n, local, reg.local[target])
        den = np.trace(B, axis1=1, axis2=2)
        return series_ratio(B, den)

    def coherence_series(self, prefix, target: int, phase: complex = 1.0) -> np.ndarray:
        """Series of Tr_rest(X |phi^1><phi^0|) / Tr(X |phi^0><phi^0|) on the whole system."""
        pairs = _as_pairs(prefix)
        reg = self.region(None)
        u0 = reg.dyson(0, self.order, self.t)
        u1 = reg.dyson(1, self.order, self.t)
        B10 = _branch_blocks(u1, u0, reg.n, pairs, target)
        B00 = _branch_blocks(u0, u0, reg.n, pairs, target)
        den = np.trace(B00, axis1=1, axis2=2)
        return phase * series_ratio(B10, den)

    def _series(self, coeffs: np.ndarray) -> ClusterSeries:
        s = ClusterSeries(complex(coeffs[0]), np.array(coeffs[1:], dtype=complex), self.t, self.t_star)
        s.check_bound()
        return s


def marginal_expansion(prefix, target: int, basis: QubitBasis, Hs: TimeDependentHamiltonian, t: float,
                       params: SamplerParams, order: int | None = None, *, alpha: int = 0,
                       allow_unsafe: bool = False, clip: float = CLIP,
                       engine: ExpansionEngine | None = None) -> tuple[ClusterSeries, float]:
    """Series for p(0 | prefix) of measuring ``target`` in ``basis``, and the clipped probability."""
    pairs = _as_pairs(prefix)
    _check_floor(pairs + [(target, basis.e0)], params.c_m, alpha)
    eng = engine or ExpansionEngine(Hs, t, params, order, allow_unsafe)
    rho = eng.reduced_series(pairs, target, alpha)
    e = basis.e0
    coeffs = np.einsum("i,mij,j->m", e.conj(), rho, e)
    s = eng._series(coeffs)
    p = float(np.clip(s.value.real, clip, 1 - clip))
    return s, p


def tilde_marginal_expansion(prefix, target: int, basis: QubitBasis, Hs: TimeDependentHamiltonian, t: float,
                             params: SamplerParams, order: int | None = None, *, allow_unsafe: bool = False,
                             engine: ExpansionEngine | None = None, phase: complex = 1.0) -> tuple[ClusterSeries, complex]:
    """Series for <e|Tr_rest(X |phi^1><phi^0|)|e>, normalized by the |0...0> branch weight.

    The zeroth term is <e|1><0|e> times the product of <e_j|1><0|e_j>/|<0|e_j>|^2
    over measured qubits; it vanishes while other qubits remain unmeasured.
    """
    pairs = _as_pairs(prefix)
    _check_floor(pairs + [(target, basis.e0)], params.c_m, 0)
    eng = engine or ExpansionEngine(Hs, t, params, order, allow_unsafe)
    rho = eng.coherence_series(pairs, target, phase)
    e = basis.e0
    coeffs = np.einsum("i,mij,j->m", e.conj(), rho, e)
    s = eng._series(coeffs)
    return s, s.value


# ----------------------------------------------------------------------------
# cluster route (validation)


def _cluster_dyson(Hs: TimeDependentHamiltonian, mu: Cluster, qubits: Sequence[int], alpha: int, t: float) -> dict:
    """Multivariate Dyson coefficients u_nu for every sub-multiset nu of mu, on ``qubits``."""
    local = {q: i for i, q in enumerate(qubits)}
    n = len(qubits)
    psi0 = basis_state([alpha] * n)
    mats = {a: _local_pauli(Hs.terms[a].pauli.ops, local, n) for a in mu.indices}
    out = {}
    for nu in mu.sub_multisets():
        seq = nu.expanded()
        acc = np.zeros(2**n, dtype=complex)
        for order_ in set(permutations(seq)):
            vec_cache = psi0
            for a in reversed(order_):
                vec_cache = mats[a] @ vec_cache
            weight = 0j
            for choice in product(*(Hs.terms[a].harmonics for a in order_)):
                rates = [1j * k * Hs.base for k, _ in choice]
                weight += np.prod([c for _, c in choice]) * simplex_integral(rates, t)
            acc += weight * vec_cache
        out[nu] = (-1j) ** nu.size * acc
    return out


def cluster_route_coefficients(prefix, target: int, basis: QubitBasis, Hs: TimeDependentHamiltonian, t: float,
                               order: int, alpha: int = 0) -> np.ndarray:
    """Order-by-order coefficients of p(0 | prefix) summed over connected clusters touching ``target``.

    For each cluster mu the ratio Z1/Z0 is inverted over the sub-multiset
    lattice: R_mu = Z1_mu - sum_{0 < nu <= mu} Z0_nu R_{mu - nu}, with both
    partition functions normalized by their zeroth term.
    """
    pairs = _as_pairs(prefix)
    dual = term_overlap_graph(Hs.terms)
    e = basis.e0
    coeffs = np.zeros(order + 1, dtype=complex)
    empty = Cluster(())
    on_target = [(0, v) for q, v in pairs if q == target]
    if on_target:
        raise ValidationError("target qubit already measured")
    psi = basis_state([alpha])
    coeffs[0] = abs(np.vdot(e, psi)) ** 2
    for m in range(1, order + 1):
        for mu in enumerate_clusters(dual, m, anchor=target):
            qubits = sorted(mu.support(dual) | {target})
            local = {q: i for i, q in enumerate(qubits)}
            lp = [(local[q], v) for q, v in pairs if q in local]
            u = _cluster_dyson(Hs, mu, qubits, alpha, t)
            z0: dict[Cluster, complex] = {}
            z1: dict[Cluster, complex] = {}
            for nu in u:
                blk = np.zeros((2, 2), dtype=complex)
                for part in nu.sub_multisets():
                    blk += _branch_blocks(u[part][None], u[nu.minus(part)][None], len(qubits), lp, local[target])[0]
                z0[nu] = np.trace(blk)
                z1[nu] = e.conj() @ blk @ e
            norm = z0[empty]
            ratio: dict[Cluster, complex] = {}
            for nu in sorted(u, key=lambda c: (c.size, c)):
                acc = z1[nu] / norm
                for part in nu.sub_multisets():
                    if part.size:
                        acc -= z0[part] / norm * ratio[nu.minus(part)]
                ratio[nu] = acc
            coeffs[m] += ratio[mu]
    return coeffs


# ----------------------------------------------------------------------------
# dense contour oracle (validation)


def contour_coefficients(Hs: TimeDependentHamiltonian, prefix, target: int, basis: QubitBasis, t: float,
                         order: int, alpha: int = 0, radius: float = 1.0, points: int = 64) -> np.ndarray:
    """Taylor coefficients in lambda of p(0 | prefix) from dense operator evolution at complex lambda.

    rho(lambda) solves d rho/ds = -i lambda [H(s), rho] from |alpha..><alpha..|; numerator and
    denominator are sampled on a circle, Fourier-transformed, and divided as series.
    """
    n = Hs.n
    comps = Hs.harmonic_dense()
    pairs = _as_pairs(prefix)
    rho0 = np.outer(basis_state([alpha] * n), basis_state([alpha] * n).conj())

    def contract(rho):
        blk = _reduce_operator(rho, n, pairs, target)
        return np.trace(blk), basis.e0.conj() @ blk @ basis.e0

    theta = 2 * np.pi * np.arange(points) / points
    z0 = np.zeros(points, dtype=complex)
    z1 = np.zeros(points, dtype=complex)
    for i, th in enumerate(theta):
        lam = radius * np.exp(1j * th)

        def rhs(s, y):
            r = y.reshape(rho0.shape)
            H = sum(np.exp(1j * k * Hs.base * s) * m for k, m in comps.items())
            return (-1j * lam * (H @ r - r @ H)).ravel()

        sol = solve_ivp(rhs, (0.0, t), rho0.ravel(), method="DOP853", rtol=1e-12, atol=1e-14)
        z0[i], z1[i] = contract(sol.y[:, -1].reshape(rho0.shape))
    c0 = np.fft.fft(z0) / points
    c1 = np.fft.fft(z1) / points
    scale = radius ** -np.arange(points)
    return series_ratio((c1 * scale)[:order + 1], (c0 * scale)[:order + 1])


def _reduce_operator(rho: np.ndarray, n: int, pairs, target: int) -> np.ndarray:
    """Tr_rest(X rho) on ``target`` for a dense operator, X projecting the measured qubits."""
    measured = {q: np.asarray(e, dtype=complex) for q, e in pairs}
    operands: list = [rho.reshape((2,) * (2 * n)), list(range(2 * n))]
    out = []
    for q in range(n):
        ket, bra = q, n + q
        if q in measured:
            operands += [measured[q].conj(), [ket], measured[q], [bra]]
        elif q == target:
            out = [ket, bra]
        else:
            operands[1][bra] = ket
    return np.einsum(*operands, out)


# ----------------------------------------------------------------------------
# sampling


def _as_time_dependent(model, t: float) -> TimeDependentHamiltonian:
    """Time-dependent models pass through; V + omega Z goes to the interaction picture."""
    if isinstance(model, TimeDependentHamiltonian):
        return model
    if isinstance(model, PerturbedHamiltonian):
        return interaction_picture(model.terms, model.omega, t, model.n)
    raise ValidationError(f"unsupported model {type(model).__name__}")


class ClusterSampler:
    """Sequential sampler driven by truncated marginal series.

    ``model`` is a TimeDependentHamiltonian (initial state |0...0>) or a
    PerturbedHamiltonian, reduced to the interaction picture first.
    """

    def __init__(self, model, t: float, provider: BasisProvider, params: SamplerParams | None = None,
                 c_m: float = 0.5, order: int | None = None, allow_unsafe: bool = False, clip: float = CLIP):
        self.Hs = _as_time_dependent(model, t)
        if self.Hs.n != provider.n:
            raise ValidationError("provider and model sizes differ")
        self.params = params or SamplerParams.for_hamiltonian(self.Hs, c_m, order or 8)
        self.t = float(t)
        self.provider = provider
        self.clip = clip
        self.engine = ExpansionEngine(self.Hs, self.t, self.params, order, allow_unsafe)
        self.audit: list[dict] = []

    def marginal(self, record: MeasurementRecord) -> tuple[ClusterSeries, float, QubitBasis]:
        basis = self.provider.next_basis(record)
        s, p = marginal_expansion(record, record.next_qubit(), basis, self.Hs, self.t, self.params,
                                  engine=self.engine, clip=self.clip)
        return s, p, basis

    def draw(self, rng: np.random.Generator, audit: bool = False) -> MeasurementRecord:
        record = self.provider.empty_record()
        for _ in range(self.provider.n):
            s, p0, basis = self.marginal(record)
            if audit:
                self.audit.append({"prefix": list(record.outcomes), "qubit": record.next_qubit(), "p0": p0,
                                   "series": s.to_dict()})
            record = record.extended(basis, int(rng.random() >= p0))
        return record

    def stream(self, rng: np.random.Generator):
        while True:
            yield self.draw(rng)

    def distribution(self) -> np.ndarray:
        """Probability of every string from the chain of truncated marginals (x_1 most significant)."""
        n = self.provider.n
        out = np.zeros(2**n)

        def walk(record, prob, index):
            if len(record.outcomes) == n:
                out[index] = prob
                return
            _, p0, basis = self.marginal(record)
            walk(record.extended(basis, 0), prob * p0, 2 * index)
            walk(record.extended(basis, 1), prob * (1 - p0), 2 * index + 1)

        walk(self.provider.empty_record(), 1.0, 0)
        return out

    def dump_audit(self) -> str:
        return "\n".join(json.dumps(a) for a in self.audit)


def sample(model, t: float, provider: BasisProvider, params: SamplerParams, rng: np.random.Generator,
           order: int | None = None, allow_unsafe: bool = False) -> MeasurementRecord:
    return ClusterSampler(model, t, provider, params, order=order, allow_unsafe=allow_unsafe).draw(rng)


# ----------------------------------------------------------------------------
# correlations after partial measurement


def _pair_correlation(rho2: np.ndarray) -> float:
    """max over Pauli pairs of |<A B> - <A><B>| for a two-qubit density matrix."""
    r = rho2.reshape(2, 2, 2, 2)
    ri = np.einsum("ajbj->ab", r)
    rj = np.einsum("iajb->ab", r)
    best = 0.0
    for a in "XYZ":
        ea = np.trace(ri @ _PAULI[a])
        for b in "XYZ":
            eb = np.trace(rj @ _PAULI[b])
            eab = np.trace(rho2 @ np.kron(_PAULI[a], _PAULI[b]))
            best = max(best, abs(eab - ea * eb))
    return float(best)


def conditional_correlation(state, i: int, j: int, prefix=()) -> float:
    """Pauli-pair connected correlation of unmeasured qubits i, j given a projected prefix.

    ``state`` is a dense vector or a (PerturbedHamiltonian, t) pair evolved from |0...0>.
    The maximum over single-qubit Paulis bounds the norm-one supremum from below.
    """
    if isinstance(state, tuple):
        H, t = state
        state = evolve(basis_state([0] * H.n), H, t)
    n = n_qubits(state)
    pairs = _as_pairs(prefix)
    measured = {q for q, _ in pairs}
    if i in measured or j in measured or i == j:
        raise ValidationError("i and j must be distinct unmeasured qubits")
    tens, qs = project(state, pairs, n)
    w = float(np.vdot(tens, tens).real)
    if w < ZERO_WEIGHT:
        raise DegenerateBranchError(f"prefix has weight {w:.3e}")
    tens = np.moveaxis(tens, [qs.index(i), qs.index(j)], [0, 1]).reshape(4, -1) / math.sqrt(w)
    return _pair_correlation(tens @ tens.conj().T)


def correlation_profile(state, ref: int, prefix, dist: Callable[[int, int], int]) -> dict:
    """Cor(ref, j) for every unmeasured j, with a log-linear fit against distance."""
    n = n_qubits(state) if not isinstance(state, tuple) else state[0].n
    if isinstance(state, tuple):
        H, t = state
        state = evolve(basis_state([0] * H.n), H, t)
    measured = {q for q, _ in _as_pairs(prefix)}
    rows = []
    for j in range(n):
        if j == ref or j in measured:
            continue
        rows.append((dist(ref, j), j, conditional_correlation(state, ref, j, prefix)))
    d = np.array([r[0] for r in rows], dtype=float)
    c = np.array([r[2] for r in rows])
    good = c > 0
    slope, icpt = np.polyfit(d[good], np.log(c[good]), 1)
    pred = slope * d[good] + icpt
    ss_res = float(np.sum((np.log(c[good]) - pred) ** 2))
    ss_tot = float(np.sum((np.log(c[good]) - np.log(c[good]).mean()) ** 2))
    return {"rows": rows, "slope": float(slope), "intercept": float(icpt),
            "r2": 1 - ss_res / ss_tot if ss_tot > 0 else 1.0}


# ----------------------------------------------------------------------------
# basis provider


class ClusterBasisProvider(BasisProvider):
    """Basis rule with both 2x2 matrices taken from truncated series.

    M = rho^0 - rho^1 uses each branch's own normalization, so its series is
    local around the target. The coherence matrix has no such locality: its
    numerator vanishes at zeroth order on every unmeasured qubit, so it is
    expanded on the whole system and normalized by the |0...0> branch weight.
    """

    backend = "cluster"

    def __init__(self, H: PerturbedHamiltonian, t: float, omega_prime: float, order=None,
                 series_order: int = 8, c_m: float = 0.5, allow_unsafe: bool = False):
        super().__init__(H.n, order)
        Hp = H.with_omega(omega_prime)
        self.Hs = interaction_picture(Hp.terms, omega_prime, t, H.n)
        self.params = SamplerParams.for_hamiltonian(self.Hs, c_m, series_order)
        self.engine = ExpansionEngine(self.Hs, t, self.params, series_order, allow_unsafe)
        # |phi^1><phi^0| picks up e^{-i w t (Z_1 - Z_0)} = e^{2 i w t N} from the field
        self.phase = np.exp(2j * omega_prime * t * H.n)
        self.fallbacks = 0

    def matrix_pair(self, record: MeasurementRecord) -> MatrixPair:
        pairs = record.pairs()
        target = record.next_qubit()
        r0 = self.engine.reduced_series(pairs, target, 0).sum(axis=0)
        r1 = self.engine.reduced_series(pairs, target, 1).sum(axis=0)
        rt = self.engine.coherence_series(pairs, target, self.phase).sum(axis=0)
        return MatrixPair(r0 - r1, rt, 1.0)

    def _compute(self, record):
        return basis_from_pair(self.matrix_pair(record), record, self)
