"""Interaction graphs, Pauli-string terms and the field-plus-perturbation Hamiltonian.

Qubits are labelled 0..N-1. In dense vectors qubit 0 is the most significant
bit, so basis index ``i`` has qubit ``q`` in state ``(i >> (N-1-q)) & 1``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ResourceError, StructureError, ValidationError

DENSE_CAP = 14

_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

# single-site products: (a, b) -> (phase, c) with a*b = phase*c
_MUL = {}
for _a, _b in product("IXYZ", repeat=2):
    _m = _PAULI[_a] @ _PAULI[_b]
    for _c in "IXYZ":
        _ph = np.trace(_PAULI[_c].conj().T @ _m) / 2
        if abs(_ph) > 0.5:
            _MUL[_a, _b] = (complex(np.round(_ph.real) + 1j * np.round(_ph.imag)), _c)


# ----------------------------------------------------------------------------
# graphs


@dataclass(frozen=True)
class InteractionGraph:
    n: int
    edges: tuple
    dist: np.ndarray = field(repr=False, compare=False)

    @property
    def max_degree(self) -> int:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return int(deg.max()) if self.n else 0

    def neighbors(self, v: int) -> list[int]:
        out = []
        for i, j in self.edges:
            if i == v:
                out.append(j)
            elif j == v:
                out.append(i)
        return sorted(out)

    def distance(self, i: int, j: int) -> int:
        return int(self.dist[i, j])

    def diameter(self, vertices: Iterable[int]) -> int:
        vs = list(vertices)
        if len(vs) < 2:
            return 0
        return int(self.dist[np.ix_(vs, vs)].max())

    def is_chain(self) -> bool:
        return set(self.edges) <= {(i, i + 1) for i in range(self.n - 1)}


def _bfs_distances(n: int, edges: Sequence[tuple[int, int]]) -> np.ndarray:
    adj = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    big = np.iinfo(np.int64).max // 4
    dist = np.full((n, n), big, dtype=np.int64)
    for src in range(n):
        dist[src, src] = 0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for w in adj[u]:
                if dist[src, w] == big:
                    dist[src, w] = dist[src, u] + 1
                    queue.append(w)
    return dist


def build_graph(kind: str, *args, edges=None) -> InteractionGraph:
    """Build a chain, ring, grid or explicit-edge interaction graph.

    ``build_graph("chain", 4)``, ``build_graph("ring", 5)``,
    ``build_graph("grid", w, h)`` or ``build_graph("edges", n, edges=[(0, 1), ...])``.
    """
    if kind == "chain":
        (n,) = args
        e = [(i, i + 1) for i in range(n - 1)]
    elif kind == "ring":
        (n,) = args
        e = [(i, i + 1) for i in range(n - 1)]
        if n > 2:
            e.append((0, n - 1))
    elif kind == "grid":
        w, h = args
        if w < 1 or h < 1:
            raise ValidationError("grid dimensions must be positive")
        n = w * h
        e = []
        for r in range(h):
            for c in range(w):
                v = r * w + c
                if c + 1 < w:
                    e.append((v, v + 1))
                if r + 1 < h:
                    e.append((v, v + w))
    elif kind == "edges":
        (n,) = args
        e = list(edges or [])
    else:
        raise ValidationError(f"unknown graph kind {kind!r}")
    if n < 1:
        raise ValidationError("graph needs at least one vertex")
    clean = set()
    for i, j in e:
        i, j = int(i), int(j)
        if not (0 <= i < n and 0 <= j < n):
            raise StructureError(f"edge ({i}, {j}) out of range for {n} vertices")
        if i == j:
            raise StructureError(f"self-loop at vertex {i}")
        key = (min(i, j), max(i, j))
        if key in clean:
            raise StructureError(f"duplicate edge {key}")
        clean.add(key)
    edges_t = tuple(sorted(clean))
    return InteractionGraph(n, edges_t, _bfs_distances(n, edges_t))


# ----------------------------------------------------------------------------
# Pauli strings


@dataclass(frozen=True)
class PauliString:
    """Coefficient times a tensor product of X/Y/Z on a few qubits.

    ``ops`` is a sorted tuple of ``(qubit, axis)`` pairs; an empty tuple is the identity.
    """

    ops: tuple
    coeff: complex = 1.0

    @staticmethod
    def make(ops, coeff=1.0) -> "PauliString":
        if isinstance(ops, str):
            ops = parse_pauli_label(ops)
        if isinstance(ops, dict):
            ops = ops.items()
        d = {}
        for q, a in ops:
            a = a.upper()
            if a not in "XYZ":
                raise ValidationError(f"bad Pauli axis {a!r}")
            if q in d:
                raise ValidationError(f"qubit {q} repeated in Pauli string")
            d[int(q)] = a
        return PauliString(tuple(sorted(d.items())), complex(coeff))

    @property
    def support(self) -> tuple:
        return tuple(q for q, _ in self.ops)

    @property
    def label(self) -> str:
        return " ".join(f"{a}{q}" for q, a in self.ops) or "I"

    def __mul__(self, other: "PauliString") -> "PauliString":
        a = dict(self.ops)
        b = dict(other.ops)
        phase = self.coeff * other.coeff
        out = {}
        for q in sorted(set(a) | set(b)):
            ph, c = _MUL[a.get(q, "I"), b.get(q, "I")]
            phase *= ph
            if c != "I":
                out[q] = c
        return PauliString(tuple(sorted(out.items())), phase)

    def scaled(self, c) -> "PauliString":
        return PauliString(self.ops, self.coeff * c)

    def commutes(self, other: "PauliString") -> bool:
        a = dict(self.ops)
        n_anti = sum(1 for q, x in other.ops if q in a and a[q] != x)
        return n_anti % 2 == 0

    def local_matrix(self, qubits: Sequence[int] | None = None) -> np.ndarray:
        """Dense matrix on ``qubits`` (default: own support), coefficient included."""
        qubits = self.support if qubits is None else tuple(qubits)
        d = dict(self.ops)
        m = np.array([[1.0 + 0j]])
        for q in qubits:
            m = np.kron(m, _PAULI[d.get(q, "I")])
        return self.coeff * m

    def action(self, n: int) -> tuple[int, np.ndarray]:
        """(flip mask, phase vector) so that (P v)[i ^ mask] = phase[i] * v[i]."""
        idx = np.arange(2**n)
        mask = 0
        phase = np.full(2**n, self.coeff, dtype=complex)
        for q, a in self.ops:
            if q >= n:
                raise StructureError(f"qubit {q} outside {n}-qubit register")
            shift = n - 1 - q
            bit = (idx >> shift) & 1
            if a in "XY":
                mask |= 1 << shift
            if a == "Y":
                phase *= np.where(bit == 0, 1j, -1j)
            elif a == "Z":
                phase *= 1 - 2 * bit
        return mask, phase

    def apply(self, vec: np.ndarray, n: int) -> np.ndarray:
        mask, phase = self.action(n)
        out = np.empty_like(vec, dtype=complex)
        idx = np.arange(2**n)
        out[idx ^ mask] = phase * vec
        return out

    def dense(self, n: int) -> np.ndarray:
        if n > DENSE_CAP:
            raise ResourceError(f"dense matrix for N={n} exceeds cap {DENSE_CAP}")
        mask, phase = self.action(n)
        idx = np.arange(2**n)
        m = np.zeros((2**n, 2**n), dtype=complex)
        m[idx ^ mask, idx] = phase
        return m


def parse_pauli_label(label: str) -> list[tuple[int, str]]:
    """Parse ``"X0 X1"`` or ``"X0*Z3"`` into [(0, 'X'), (1, 'X')]."""
    out = []
    for tok in label.replace("*", " ").split():
        if tok.upper() == "I":
            continue
        axis, rest = tok[0].upper(), tok[1:]
        if axis not in "XYZ" or not rest.isdigit():
            raise ValidationError(f"bad Pauli token {tok!r}")
        out.append((int(rest), axis))
    return out


@dataclass(frozen=True)
class LocalTerm:
    """One V_S: a sum of Pauli strings sharing the support set S."""

    strings: tuple
    support: tuple
    norm: float

    @staticmethod
    def make(strings: Sequence[PauliString]) -> "LocalTerm":
        strings = tuple(strings)
        if not strings:
            raise ValidationError("empty local term")
        support = tuple(sorted({q for s in strings for q in s.support}))
        if not support:
            raise ValidationError("interaction term without support")
        m = sum(s.local_matrix(support) for s in strings)
        if np.linalg.norm(m - m.conj().T) > 1e-12 * max(1.0, np.linalg.norm(m)):
            raise ValidationError(f"local term on {support} is not Hermitian")
        norm = float(np.max(np.abs(np.linalg.eigvalsh(m)))) if m.size else 0.0
        return LocalTerm(strings, support, norm)

    def local_matrix(self) -> np.ndarray:
        return sum(s.local_matrix(self.support) for s in self.strings)


def local_strength(terms: Sequence[LocalTerm], graph: InteractionGraph | None = None) -> float:
    """max over qubits j of the summed operator norms of the terms touching j."""
    if not terms:
        return 0.0
    n = graph.n if graph is not None else 1 + max(max(t.support) for t in terms)
    acc = np.zeros(n)
    for t in terms:
        for q in t.support:
            acc[q] += t.norm
    return float(acc.max())


@dataclass(frozen=True)
class PerturbedHamiltonian:
    """V + omega * sum_j Z_j on an interaction graph."""

    graph: InteractionGraph
    terms: tuple
    omega: float
    max_range: int = 3

    def __post_init__(self):
        for t in self.terms:
            if max(t.support) >= self.graph.n:
                raise StructureError(f"term on {t.support} outside graph of {self.graph.n} qubits")
            if self.graph.diameter(t.support) > self.max_range:
                raise ValidationError(f"term on {t.support} exceeds interaction range {self.max_range}")

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def local_strength(self) -> float:
        return local_strength(self.terms, self.graph)

    def with_omega(self, omega: float) -> "PerturbedHamiltonian":
        return PerturbedHamiltonian(self.graph, self.terms, float(omega), self.max_range)

    def strings(self) -> list[PauliString]:
        return [s for t in self.terms for s in t.strings]

    def perturbation_diagonal_split(self):
        """Flip-mask grouping of V: {mask: phase vector}, used for fast dense builds."""
        n = self.n
        groups: dict[int, np.ndarray] = {}
        for s in self.strings():
            mask, ph = s.action(n)
            if mask in groups:
                groups[mask] = groups[mask] + ph
            else:
                groups[mask] = ph
        return groups


def field_diagonal(n: int) -> np.ndarray:
    """Diagonal of Z = sum_j Z_j."""
    idx = np.arange(2**n)
    pop = np.zeros(2**n, dtype=np.int64)
    for q in range(n):
        pop += (idx >> q) & 1
    return (n - 2 * pop).astype(float)


def assemble_dense(H: PerturbedHamiltonian, cap: int = DENSE_CAP, include_field: bool = True) -> np.ndarray:
    """Dense 2^N x 2^N matrix of V + omega Z."""
    n = H.n
    if n > cap:
        raise ResourceError(f"dense matrix for N={n} exceeds cap {cap}")
    dim = 2**n
    m = np.zeros((dim, dim), dtype=complex)
    idx = np.arange(dim)
    for mask, ph in H.perturbation_diagonal_split().items():
        m[idx ^ mask, idx] += ph
    if include_field:
        m[idx, idx] += H.omega * field_diagonal(n)
    return m


def assemble_sparse(H: PerturbedHamiltonian, include_field: bool = True):
    """The same operator as a CSR matrix, for Krylov evolution past the dense range."""
    n = H.n
    dim = 2**n
    idx = np.arange(dim)
    rows, cols, vals = [], [], []
    for mask, ph in H.perturbation_diagonal_split().items():
        rows.append(idx ^ mask)
        cols.append(idx)
        vals.append(ph)
    if include_field:
        rows.append(idx)
        cols.append(idx)
        vals.append(H.omega * field_diagonal(n).astype(complex))
    if not rows:
        return sp.csr_matrix((dim, dim), dtype=complex)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim))


def ising_chain(n: int, J: float, omega: float, axis: str = "XX") -> PerturbedHamiltonian:
    """sum_i J X_i X_{i+1} + omega sum_i Z_i on an open chain."""
    g = build_graph("chain", n)
    terms = [LocalTerm.make([PauliString.make([(i, axis[0]), (i + 1, axis[1])], J)]) for i in range(n - 1)]
    return PerturbedHamiltonian(g, tuple(terms) if J != 0 else (), float(omega))


def transverse_field(n: int, J: float, omega: float, axis: str = "X") -> PerturbedHamiltonian:
    """sum_i J X_i + omega sum_i Z_i (independent qubits)."""
    g = build_graph("chain", n)
    terms = [LocalTerm.make([PauliString.make([(i, axis)], J)]) for i in range(n)]
    return PerturbedHamiltonian(g, tuple(terms) if J != 0 else (), float(omega))


def random_local_hamiltonian(graph: InteractionGraph, scale: float, omega: float, rng) -> PerturbedHamiltonian:
    """Random real Pauli-sum terms on every edge and vertex, for property tests."""
    terms = []
    for v in range(graph.n):
        terms.append(LocalTerm.make([PauliString.make([(v, a)], scale * rng.normal()) for a in "XYZ"]))
    for i, j in graph.edges:
        strs = [PauliString.make([(i, a), (j, b)], scale * rng.normal()) for a in "XYZ" for b in "XYZ"]
        terms.append(LocalTerm.make(strs))
    return PerturbedHamiltonian(graph, tuple(terms), float(omega))


# ----------------------------------------------------------------------------
# interaction picture


@dataclass(frozen=True)
class FourierTerm:
    """A unit Pauli string with coefficient function sum_k c_k exp(i k base s)."""

    pauli: PauliString
    harmonics: tuple  # ((k, c_k), ...), k integer

    def coefficient(self, s: float, base: float) -> complex:
        return sum(c * np.exp(1j * k * base * s) for k, c in self.harmonics)

    @property
    def amplitude_bound(self) -> float:
        return float(sum(abs(c) for _, c in self.harmonics))


@dataclass(frozen=True)
class TimeDependentHamiltonian:
    """H(s) = sum_a J_a(s) H_a with every J_a a Fourier sum over multiples of ``base``."""

    n: int
    terms: tuple
    base: float

    @property
    def harmonics(self) -> tuple:
        return tuple(sorted({k for t in self.terms for k, _ in t.harmonics}))

    @property
    def frequencies(self) -> tuple:
        return tuple(k * self.base for k in self.harmonics)

    @property
    def j_tilde(self) -> float:
        return max((t.amplitude_bound for t in self.terms), default=0.0)

    def dense(self, s: float) -> np.ndarray:
        m = np.zeros((2**self.n, 2**self.n), dtype=complex)
        for t in self.terms:
            m += t.coefficient(s, self.base) * t.pauli.dense(self.n)
        return m

    def harmonic_dense(self) -> dict[int, np.ndarray]:
        """{k: dense matrix of the e^{i k base s} component}."""
        out: dict[int, np.ndarray] = {}
        for t in self.terms:
            d = t.pauli.dense(self.n)
            for k, c in t.harmonics:
                out[k] = out.get(k, 0) + c * d
        return out

    @staticmethod
    def constant(H: PerturbedHamiltonian, include_field: bool = False) -> "TimeDependentHamiltonian":
        terms = [FourierTerm(PauliString(s.ops), ((0, s.coeff),)) for s in H.strings()]
        if include_field and H.omega != 0:
            terms += [FourierTerm(PauliString(((q, "Z"),)), ((0, H.omega),)) for q in range(H.n)]
        return TimeDependentHamiltonian(H.n, tuple(terms), 1.0)


# rotated single-site Paulis: e^{-i w u Z} P e^{i w u Z} = sum_h e^{i h 2 w u} sum_axis c * axis
_ROTATED = {
    "X": {1: {"X": 0.5, "Y": -0.5j}, -1: {"X": 0.5, "Y": 0.5j}},
    "Y": {1: {"X": 0.5j, "Y": 0.5}, -1: {"X": -0.5j, "Y": 0.5}},
    "Z": {0: {"Z": 1.0}},
}


def rotate_string(p: PauliString) -> dict[tuple, dict[int, complex]]:
    """Expand e^{-i w u Z} P e^{i w u Z} as {ops: {harmonic: coeff}} (harmonics of 2wu)."""
    acc: dict[tuple, dict[int, complex]] = {}
    choices = [[(q, h, ax, c) for h, d in _ROTATED[a].items() for ax, c in d.items()] for q, a in p.ops]
    for combo in product(*choices):
        ops = tuple((q, ax) for q, _, ax, _ in combo)
        h = sum(x[1] for x in combo)
        c = p.coeff * np.prod([x[3] for x in combo]) if combo else p.coeff
        slot = acc.setdefault(ops, {})
        slot[h] = slot.get(h, 0) + c
    return acc


def interaction_picture(terms: Sequence[LocalTerm], omega: float, t: float, n: int | None = None) -> TimeDependentHamiltonian:
    """H(s) = V(t - s) with V(u) = e^{-i omega u Z} V e^{i omega u Z}.

    The harmonic index k multiplies the base frequency 2*omega.
    """
    if n is None:
        n = 1 + max((max(x.support) for x in terms), default=0)
    acc: dict[tuple, dict[int, complex]] = {}
    for term in terms:
        for s in term.strings:
            for ops, hs in rotate_string(s).items():
                slot = acc.setdefault(ops, {})
                for h, c in hs.items():
                    slot[h] = slot.get(h, 0) + c
    base = 2.0 * omega
    out = []
    for ops in sorted(acc):
        # e^{i h base (t - s)} = e^{i h base t} e^{-i h base s}
        harm = []
        for h in sorted(acc[ops]):
            c = acc[ops][h]
            if abs(c) < 1e-15:
                continue
            harm.append((-h, complex(c * np.exp(1j * h * base * t))))
        if harm:
            out.append(FourierTerm(PauliString(ops), tuple(sorted(harm))))
    return TimeDependentHamiltonian(n, tuple(out), base)


# ----------------------------------------------------------------------------
# spec file


def hamiltonian_from_dict(d: dict) -> PerturbedHamiltonian:
    """Strictly validate a parsed Hamiltonian description.

    Expected keys: ``graph`` ({kind, n | w,h | edges}), ``omega``, ``terms``
    (list of {paulis, coefficient}) and optional ``range``.
    """
    if not isinstance(d, dict):
        raise ValidationError("hamiltonian spec must be a mapping")
    allowed = {"graph", "omega", "terms", "range"}
    extra = set(d) - allowed
    if extra:
        raise ValidationError(f"unknown hamiltonian keys: {sorted(extra)}")
    for key in ("graph", "omega"):
        if key not in d:
            raise ValidationError(f"hamiltonian spec missing {key!r}")
    g = d["graph"]
    kind = g.get("kind")
    if kind in ("chain", "ring"):
        graph = build_graph(kind, int(g["n"]))
    elif kind == "grid":
        graph = build_graph("grid", int(g["w"]), int(g["h"]))
    elif kind == "edges":
        graph = build_graph("edges", int(g["n"]), edges=[tuple(e) for e in g.get("edges", [])])
    else:
        raise ValidationError(f"unknown graph kind {kind!r}")
    grouped: dict[tuple, list[PauliString]] = {}
    for i, item in enumerate(d.get("terms") or []):
        if set(item) - {"paulis", "coefficient"} or "paulis" not in item:
            raise ValidationError(f"term {i}: need exactly 'paulis' and 'coefficient'")
        coeff = item.get("coefficient", 1.0)
        if isinstance(coeff, (list, tuple)):
            coeff = complex(coeff[0], coeff[1])
        s = PauliString.make(item["paulis"], coeff)
        if not s.ops:
            raise ValidationError(f"term {i}: identity is not an interaction")
        grouped.setdefault(s.support, []).append(s)
    terms = tuple(LocalTerm.make(v) for _, v in sorted(grouped.items()))
    return PerturbedHamiltonian(graph, terms, float(d["omega"]), int(d.get("range", 3)))


def hamiltonian_to_dict(H: PerturbedHamiltonian) -> dict:
    """Canonical echo of a Hamiltonian (sorted terms, plain floats)."""
    g = H.graph
    if g.edges == tuple((i, i + 1) for i in range(g.n - 1)):
        graph = {"kind": "chain", "n": g.n}
    else:
        graph = {"kind": "edges", "n": g.n, "edges": [list(e) for e in g.edges]}
    terms = []
    for t in H.terms:
        for s in t.strings:
            c = s.coeff
            coeff = float(c.real) if abs(c.imag) < 1e-15 else [float(c.real), float(c.imag)]
            terms.append({"paulis": s.label, "coefficient": coeff})
    return {"graph": graph, "omega": float(H.omega), "range": H.max_range, "terms": terms}
