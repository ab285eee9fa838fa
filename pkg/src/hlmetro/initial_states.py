"""GHZ-like probe states: pairs of orthonormal branches with an extensive Z gap."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import ValidationError
from .exact_engine import basis_state, expect, n_qubits, product_state, total_z
from .pauli_graph import InteractionGraph, PauliString, build_graph


@dataclass(frozen=True)
class SuperposedPair:
    branch0: np.ndarray = field(repr=False)
    branch1: np.ndarray = field(repr=False)
    c_in: float
    xi: float = 0.0

    @property
    def n(self) -> int:
        return n_qubits(self.branch0)

    def combined(self) -> np.ndarray:
        return (self.branch0 + self.branch1) / np.sqrt(2)


def polarization_gap(b0: np.ndarray, b1: np.ndarray) -> float:
    """c_in = (<Z>_0 - <Z>_1) / (2N)."""
    n = n_qubits(b0)
    z = total_z(n)
    return float((expect(b0, z) - expect(b1, z)).real / (2 * n))


def _check_pair(b0, b1):
    if abs(np.vdot(b0, b1)) > 1e-8:
        raise ValidationError("branches are not orthogonal")
    for b in (b0, b1):
        if abs(np.linalg.norm(b) - 1) > 1e-8:
            raise ValidationError("branch is not normalized")


def make_ghz(n: int) -> SuperposedPair:
    if n < 1:
        raise ValidationError("N must be positive")
    return SuperposedPair(basis_state([0] * n), basis_state([1] * n), 1.0, 0.0)


def make_rotated_ghz(n: int, alpha: complex, beta: complex) -> SuperposedPair:
    """|0...0> together with (alpha|0> + beta|1>)^N orthogonalized against it."""
    if abs(abs(alpha) ** 2 + abs(beta) ** 2 - 1) > 1e-10:
        raise ValidationError("|alpha|^2 + |beta|^2 must be 1")
    if abs(beta) == 0:
        raise ValidationError("beta must be nonzero")
    b0 = basis_state([0] * n)
    raw = product_state([np.array([alpha, beta])] * n)
    ov = np.vdot(b0, raw)
    if abs(ov) > 1 - 1e-12:
        raise ValidationError("rotated branch is degenerate with |0...0>")
    b1 = raw - ov * b0
    b1 /= np.linalg.norm(b1)
    _check_pair(b0, b1)
    return SuperposedPair(b0, b1, polarization_gap(b0, b1), 0.0)


def make_custom_pair(b0, b1) -> SuperposedPair:
    b0 = np.asarray(b0, dtype=complex)
    b1 = np.asarray(b1, dtype=complex)
    _check_pair(b0, b1)
    return SuperposedPair(b0, b1, polarization_gap(b0, b1), 0.0)


def make_mixed_ghz(n: int) -> list[tuple[float, np.ndarray]]:
    """The incoherent mixture of |0...0> and |1...1> with equal weights."""
    return [(0.5, basis_state([0] * n)), (0.5, basis_state([1] * n))]


def zz_gap(pair: SuperposedPair) -> float:
    """c'_in from the ZZ fluctuation: (<Z^2> - <Z>^2) / N^2 on the combined state."""
    psi = pair.combined()
    z = total_z(pair.n)
    m1 = expect(psi, z).real
    m2 = expect(psi, z**2).real
    return float((m2 - m1**2) / pair.n**2)


def single_site_correlations(state: np.ndarray) -> np.ndarray:
    """cor[i, j] = max over Pauli pairs of |<O_i O_j> - <O_i><O_j>|."""
    n = n_qubits(state)
    one = {(q, a): expect(state, PauliString.make([(q, a)])) for q in range(n) for a in "XYZ"}
    cor = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            best = 0.0
            for a, b in product("XYZ", repeat=2):
                two = expect(state, PauliString.make([(i, a), (j, b)]))
                best = max(best, abs(two - one[i, a] * one[j, b]))
            cor[i, j] = cor[j, i] = best
    return cor


def verify_correlation_decay(branch: np.ndarray, graph: InteractionGraph | None = None, floor: float = 1e-12):
    """Fit max connected correlation vs graph distance to c * exp(-d / xi).

    Returns (c_xi, xi, table) where ``table`` maps distance to the max correlation.
    A product state gives xi = 0.
    """
    n = n_qubits(branch)
    graph = graph or build_graph("chain", n)
    cor = single_site_correlations(branch)
    table: dict[int, float] = {}
    for i in range(n):
        for j in range(i + 1, n):
            d = graph.distance(i, j)
            table[d] = max(table.get(d, 0.0), cor[i, j])
    pts = [(d, c) for d, c in sorted(table.items()) if c > floor]
    if not pts or max(c for _, c in pts) <= 1e-10:
        return 0.0, 0.0, table
    if len(pts) == 1:
        return pts[0][1], 0.0, table
    d, c = np.array(pts).T
    slope, icpt = np.polyfit(d, np.log(c), 1)
    xi = -1.0 / slope if slope < 0 else np.inf
    K = graph.max_degree
    if K > 2 and np.isfinite(xi) and xi >= 1 / np.log(K - 1):
        warnings.warn(f"correlation length {xi:.3g} above 1/log(K-1)", stacklevel=2)
    return float(np.exp(icpt)), float(xi), table
