"""Matrix product states on an open chain: Trotterized evolution, contraction, projection, sampling."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DegenerateBranchError, ResourceError, StructureError, ValidationError
from .exact_engine import ZERO_WEIGHT
from .locc import BasisProvider, MeasurementRecord, basis_from_pair, matrix_pair_from_reduced
from .pauli_graph import PauliString, PerturbedHamiltonian

D_MAX = 64
CUTOFF = 1e-10


@dataclass(frozen=True)
class MatrixProductState:
    """Tensors of shape (left bond, 2, right bond); ``labels`` are the original qubit indices."""

    tensors: tuple
    labels: tuple
    center: int | None = None
    trunc_error: float = 0.0

    @property
    def n(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list[int]:
        return [a.shape[2] for a in self.tensors[:-1]]

    def to_dense(self) -> np.ndarray:
        v = self.tensors[0].reshape(-1, self.tensors[0].shape[2])
        for a in self.tensors[1:]:
            v = (v @ a.reshape(a.shape[0], -1)).reshape(-1, a.shape[2])
        return v.reshape(-1) * 1.0

    def norm(self) -> float:
        return math.sqrt(abs(inner(self, self)))


def mps_from_product(states, n: int | None = None) -> MatrixProductState:
    """Bond-dimension-one MPS from bits or single-qubit vectors."""
    vecs = []
    for s in states:
        if np.isscalar(s):
            v = np.zeros(2, dtype=complex)
            v[int(s)] = 1.0
        else:
            v = np.asarray(s, dtype=complex)
            v = v / np.linalg.norm(v)
        vecs.append(v.reshape(1, 2, 1))
    if n is not None and len(vecs) != n:
        raise StructureError("number of site states differs from N")
    return MatrixProductState(tuple(vecs), tuple(range(len(vecs))), 0)


def mps_ghz_branches(n: int) -> tuple[MatrixProductState, MatrixProductState]:
    return mps_from_product([0] * n), mps_from_product([1] * n)


def mps_ghz(n: int) -> MatrixProductState:
    """(|0...0> + |1...1>)/sqrt(2) with bond dimension 2."""
    ts = []
    for i in range(n):
        a = np.zeros((1 if i == 0 else 2, 2, 1 if i == n - 1 else 2), dtype=complex)
        for b in (0, 1):
            a[0 if i == 0 else b, b, 0 if i == n - 1 else b] = 1.0
        ts.append(a)
    ts[0] = ts[0] / math.sqrt(2)
    return MatrixProductState(tuple(ts), tuple(range(n)), None)


def mps_from_dense(psi: np.ndarray, cutoff: float = 1e-14) -> MatrixProductState:
    n = int(round(math.log2(psi.shape[0])))
    ts = []
    rest = np.asarray(psi, dtype=complex).reshape(1, -1)
    for _ in range(n - 1):
        dl = rest.shape[0]
        rest = rest.reshape(dl * 2, -1)
        u, s, vh = np.linalg.svd(rest, full_matrices=False)
        keep = max(1, int(np.sum(s > cutoff * s[0])))
        ts.append(u[:, :keep].reshape(dl, 2, keep))
        rest = s[:keep, None] * vh[:keep]
    ts.append(rest.reshape(rest.shape[0], 2, 1))
    return MatrixProductState(tuple(ts), tuple(range(n)), n - 1)


# ----------------------------------------------------------------------------
# contraction


def _transfer(env: np.ndarray, bra: np.ndarray, ket: np.ndarray, op: np.ndarray | None = None) -> np.ndarray:
    # env[b, k]; bra, ket (D, 2, D')
    if op is not None:
        ket = np.einsum("st,atb->asb", op, ket)
    tmp = np.tensordot(env, ket, axes=([1], [0]))  # (b, s, k')
    return np.tensordot(bra.conj(), tmp, axes=([0, 1], [0, 1]))  # (b', k')


def inner(bra: MatrixProductState, ket: MatrixProductState) -> complex:
    return contract_string_expectation(bra, ket, {})


def _check_pair(bra, ket):
    if bra.n != ket.n:
        raise StructureError(f"MPS lengths differ ({bra.n} vs {ket.n})")


def contract_string_expectation(bra: MatrixProductState, ket: MatrixProductState, ops) -> complex:
    """<bra| O |ket> for O a product of single-site operators.

    ``ops`` maps site position to a 2x2 matrix, or is a PauliString over labels.
    """
    _check_pair(bra, ket)
    if isinstance(ops, PauliString):
        pos = {lab: i for i, lab in enumerate(ket.labels)}
        mats = {pos[q]: PauliString(((q, a),)).local_matrix() for q, a in ops.ops}
        scale = ops.coeff
    else:
        mats, scale = dict(ops), 1.0
    env = np.ones((1, 1), dtype=complex)
    for i in range(ket.n):
        env = _transfer(env, bra.tensors[i], ket.tensors[i], mats.get(i))
    return complex(scale * env[0, 0])


def reduced_matrix(bra: MatrixProductState, ket: MatrixProductState, site: int) -> np.ndarray:
    """R[a, b] = sum_rest <a, r|ket><bra|b, r>, i.e. Tr_rest |ket><bra| at position ``site``."""
    _check_pair(bra, ket)
    left = np.ones((1, 1), dtype=complex)
    for i in range(site):
        left = _transfer(left, bra.tensors[i], ket.tensors[i])
    right = np.ones((1, 1), dtype=complex)
    for i in range(ket.n - 1, site, -1):
        b, k = bra.tensors[i], ket.tensors[i]
        right = np.einsum("asc,bsd,cd->ab", k, b.conj(), right)
    k, b = ket.tensors[site], bra.tensors[site]
    # left is indexed (bra, ket), right (ket, bra)
    return np.einsum("xy,yaz,xbw,zw->ab", left, k, b.conj(), right)


# ----------------------------------------------------------------------------
# canonical form and gates


def _qr(m: np.ndarray):
    """QR with a non-negative real diagonal in R, so the factorization is unique."""
    q, r = np.linalg.qr(m)
    d = np.diagonal(r)
    ph = np.where(np.abs(d) > 0, d / np.where(np.abs(d) > 0, np.abs(d), 1), 1)
    return q * ph, r * ph.conj()[:, None]


def _move_center(ts: list, frm: int, to: int) -> None:
    for i in range(frm, to):
        a = ts[i]
        q, r = _qr(a.reshape(-1, a.shape[2]))
        ts[i] = q.reshape(a.shape[0], 2, -1)
        ts[i + 1] = np.tensordot(r, ts[i + 1], axes=([1], [0]))
    for i in range(frm, to, -1):
        a = ts[i]
        q, r = _qr(a.reshape(a.shape[0], -1).T)
        ts[i] = q.T.reshape(-1, 2, a.shape[2])
        ts[i - 1] = np.tensordot(ts[i - 1], r.T, axes=([2], [0]))


def _phase_fix_columns(u: np.ndarray, vh: np.ndarray):
    """Make the largest entry of each left singular vector real positive."""
    k = np.argmax(np.abs(u) > np.abs(u).max(axis=0) * (1 - 1e-9), axis=0)
    ph = u[k, np.arange(u.shape[1])]
    ph = ph / np.abs(ph)
    return u * ph.conj(), vh * ph[:, None]


def canonicalize(state: MatrixProductState, center: int = 0) -> MatrixProductState:
    """Mixed canonical form built from Schmidt vectors, normalized.

    Sites left of ``center`` are left isometries and sites right of it right
    isometries. Singular vectors carry a fixed phase, so the result is a
    function of the state alone whenever its Schmidt spectra are non-degenerate.
    """
    ts = [np.array(a, dtype=complex) for a in state.tensors]
    n = len(ts)
    _move_center(ts, 0, n - 1)
    for i in range(n - 1, 0, -1):
        a = ts[i]
        m = a.reshape(a.shape[0], -1)
        u, s, vh = np.linalg.svd(m, full_matrices=False)
        keep = max(1, int(np.sum(s > 1e-15 * s[0])))
        u, s, vh = u[:, :keep], s[:keep], vh[:keep]
        vt, ut = _phase_fix_columns(vh.T, u.T)
        vh, u = vt.T, ut.T
        ts[i] = vh.reshape(keep, 2, a.shape[2])
        ts[i - 1] = np.tensordot(ts[i - 1], u * s, axes=([2], [0]))
    for i in range(center):
        a = ts[i]
        m = a.reshape(-1, a.shape[2])
        u, s, vh = np.linalg.svd(m, full_matrices=False)
        keep = max(1, int(np.sum(s > 1e-15 * s[0])))
        u, s, vh = u[:, :keep], s[:keep], vh[:keep]
        u, vh = _phase_fix_columns(u, vh)
        ts[i] = u.reshape(a.shape[0], 2, keep)
        ts[i + 1] = np.tensordot(s[:, None] * vh, ts[i + 1], axes=([1], [0]))
    nrm = np.linalg.norm(ts[center])
    if nrm < 1e-300:
        raise DegenerateBranchError("zero-norm MPS")
    ts[center] = ts[center] / nrm
    return MatrixProductState(tuple(ts), state.labels, center, state.trunc_error)


def _truncated_svd(theta: np.ndarray, cutoff: float, d_max: int):
    u, s, vh = np.linalg.svd(theta, full_matrices=False)
    total = float(np.sum(s**2))
    keep = int(np.sum(s > cutoff * s[0])) if s[0] > 0 else 1
    keep = max(1, min(keep, d_max))
    disc = float(np.sum(s[keep:] ** 2))
    s_kept = s[:keep] * math.sqrt(total / max(total - disc, 1e-300))
    return u[:, :keep], s_kept, vh[:keep], math.sqrt(disc / total) if total > 0 else 0.0


@dataclass
class _Sweeper:
    ts: list
    center: int
    cutoff: float
    d_max: int
    error: float = 0.0
    max_growth: float = 1.0

    def apply(self, i: int, gate: np.ndarray) -> None:
        """Two-site gate on positions (i, i+1); centre ends at i+1."""
        if self.center < i:
            _move_center(self.ts, self.center, i)
        elif self.center > i + 1:
            _move_center(self.ts, self.center, i + 1)
        a, b = self.ts[i], self.ts[i + 1]
        dl, dr = a.shape[0], b.shape[2]
        before = max(a.shape[2], 1)
        theta = np.tensordot(a, b, axes=([2], [0])).reshape(dl, 4, dr)
        theta = np.einsum("st,atb->asb", gate, theta).reshape(dl * 2, 2 * dr)
        u, s, vh, err = _truncated_svd(theta, self.cutoff, self.d_max)
        self.max_growth = max(self.max_growth, len(s) / before)
        self.ts[i] = u.reshape(dl, 2, -1)
        self.ts[i + 1] = (s[:, None] * vh).reshape(-1, 2, dr)
        self.center = i + 1
        self.error += err

    def apply_one(self, i: int, gate: np.ndarray) -> None:
        self.ts[i] = np.einsum("st,asb->atb", gate, self.ts[i])


def bond_hamiltonians(H: PerturbedHamiltonian) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Split V + omega Z into 4x4 bond terms (on-site parts shared between bonds)."""
    n = H.n
    if not H.graph.is_chain():
        raise ValidationError("MPS backend needs a chain graph")
    onsite = [H.omega * np.diag([1.0, -1.0]).astype(complex) for _ in range(n)]
    bonds = [np.zeros((4, 4), dtype=complex) for _ in range(max(n - 1, 0))]
    for term in H.terms:
        sup = term.support
        if len(sup) == 1:
            onsite[sup[0]] = onsite[sup[0]] + term.local_matrix()
        elif len(sup) == 2 and sup[1] == sup[0] + 1:
            bonds[sup[0]] = bonds[sup[0]] + term.local_matrix()
        else:
            raise ValidationError(f"term on {sup} is not nearest-neighbour")
    eye = np.eye(2)
    if n == 1:
        return [], onsite
    for q in range(n):
        touching = [b for b in (q - 1, q) if 0 <= b < n - 1]
        share = onsite[q] / len(touching)
        for b in touching:
            bonds[b] = bonds[b] + (np.kron(share, eye) if b == q else np.kron(eye, share))
    return bonds, onsite


_YOSHIDA = (1 / (2 - 2 ** (1 / 3)), -(2 ** (1 / 3)) / (2 - 2 ** (1 / 3)))


def _strang_weights(order: int) -> list[float]:
    if order == 2:
        return [1.0]
    if order == 4:
        w1, w0 = _YOSHIDA
        return [w1, w0, w1]
    raise ValidationError("Trotter order must be 2 or 4")


def default_trotter_steps(H: PerturbedHamiltonian, t: float, order: int = 2, tol: float = 1e-4) -> int:
    """Steps so that N t L (L dt)^order stays below ``tol`` (L: largest bond norm)."""
    bonds, onsite = bond_hamiltonians(H)
    mats = bonds or onsite
    L = max(np.linalg.norm(b, 2) for b in mats) if mats else 0.0
    if L == 0 or t == 0:
        return 1
    dt = (tol / (H.n * abs(t) * L)) ** (1 / order) / L
    return max(1, math.ceil(abs(t) / dt))


def evolve_mps(state: MatrixProductState, H: PerturbedHamiltonian, t: float, trotter_steps: int | None = None,
               d_max: int = D_MAX, cutoff: float = CUTOFF, order: int = 2,
               error_budget: float | None = None) -> MatrixProductState:
    """Trotterized e^{-itH}|state> with SVD truncation after every two-site gate."""
    if t == 0:
        return state
    n = state.n
    if H.n != n:
        raise StructureError("state and Hamiltonian sizes differ")
    bonds, onsite = bond_hamiltonians(H)
    steps = trotter_steps or default_trotter_steps(H, t, order)
    dt = t / steps
    if error_budget is None:
        error_budget = 1 / (2 * math.sqrt(n))
    sw = _Sweeper([np.array(a) for a in canonicalize(state, 0).tensors], 0, cutoff, d_max)
    if n == 1:
        sw.apply_one(0, sla.expm(-1j * t * onsite[0]))
    else:
        even = list(range(0, n - 1, 2))
        odd = list(range(1, n - 1, 2))
        cache: dict[float, list[np.ndarray]] = {}

        def gates(tau):
            key = round(tau, 15)
            if key not in cache:
                cache[key] = [sla.expm(-1j * tau * b) for b in bonds]
            return cache[key]

        for _ in range(steps):
            for w in _strang_weights(order):
                half, full = gates(0.5 * w * dt), gates(w * dt)
                for i in even:
                    sw.apply(i, half[i])
                for i in odd:
                    sw.apply(i, full[i])
                for i in reversed(even):
                    sw.apply(i, half[i])
    err = state.trunc_error + sw.error
    if err > error_budget:
        raise ResourceError(f"truncation error {err:.2e} over budget; raise D_max")
    out = MatrixProductState(tuple(sw.ts), state.labels, sw.center, err)
    return canonicalize(out, 0)


# ----------------------------------------------------------------------------
# projection, bases and sampling


def project_qubit(state: MatrixProductState, site: int, vector: np.ndarray, normalize: bool = True):
    """Contract ``site`` with <vector| and merge it into a neighbour.

    Returns (new state on N-1 sites, weight). The weight is the squared norm
    of the projected state relative to the input norm.
    """
    if not 0 <= site < state.n:
        raise StructureError(f"site {site} out of range")
    v = np.asarray(vector, dtype=complex).conj()
    m = np.tensordot(v, state.tensors[site], axes=([0], [1]))  # (Dl, Dr)
    ts = list(state.tensors)
    labels = list(state.labels)
    nrm_in = inner(state, state).real
    if state.n == 1:
        amp = complex(m[0, 0])
        return MatrixProductState((), (), None, state.trunc_error), abs(amp) ** 2 / nrm_in
    if site > 0:
        ts[site - 1] = np.tensordot(ts[site - 1], m, axes=([2], [0]))
    else:
        ts[site + 1] = np.tensordot(m, ts[site + 1], axes=([1], [0]))
    del ts[site]
    del labels[site]
    out = MatrixProductState(tuple(ts), tuple(labels), None, state.trunc_error)
    w = inner(out, out).real / nrm_in
    if w < ZERO_WEIGHT:
        raise DegenerateBranchError(f"projection weight {w:.3e}")
    if normalize:
        f = 1 / math.sqrt(inner(out, out).real)
        ts[0] = ts[0] * f
        out = MatrixProductState(tuple(ts), tuple(labels), None, state.trunc_error)
    return out, w


class MpsBasisProvider(BasisProvider):
    """Basis rule evaluated on MPS branch pairs by transfer-matrix contraction."""

    backend = "mps"

    def __init__(self, phi0: MatrixProductState, phi1: MatrixProductState, order=None):
        super().__init__(phi0.n, order)
        self.root = (phi0, phi1, 1.0, 1.0)
        self._branches: dict[tuple, tuple] = {(): self.root}
        self.fallbacks = 0

    @staticmethod
    def from_hamiltonian(H: PerturbedHamiltonian, t: float, omega_prime: float, order=None,
                         trotter_order: int = 4, trotter_tol: float = 1e-7, cutoff: float = 1e-14, **kw):
        """GHZ branches evolved under H at the known field.

        Defaults are tighter than for plain evolution: basis choices hinge on
        matrix elements that are small at intermediate qubits.
        """
        b0, b1 = mps_ghz_branches(H.n)
        Hp = H.with_omega(omega_prime)
        kw.setdefault("trotter_steps", default_trotter_steps(Hp, t, trotter_order, trotter_tol))
        kw.update(order=trotter_order, cutoff=cutoff)
        return MpsBasisProvider(evolve_mps(b0, Hp, t, **kw), evolve_mps(b1, Hp, t, **kw), order)

    def _branch(self, record: MeasurementRecord):
        key = record.outcomes
        if key in self._branches:
            return self._branches[key]
        parent = MeasurementRecord(record.outcomes[:-1], record.bases[:-1], record.order)
        p0, p1, w0, w1 = self._branch(parent)
        q = record.order[len(key) - 1]
        vec = record.bases[-1].vector(key[-1])
        n0, u0 = project_qubit(p0, p0.labels.index(q), vec)
        n1, u1 = project_qubit(p1, p1.labels.index(q), vec)
        got = (n0, n1, w0 * u0, w1 * u1)
        self._branches[key] = got
        return got

    def matrix_pair(self, record: MeasurementRecord):
        b0, b1, w0, w1 = self._branch(record)
        site = b0.labels.index(record.next_qubit())
        r00 = w0 * reduced_matrix(b0, b0, site)
        r11 = w1 * reduced_matrix(b1, b1, site)
        r10 = math.sqrt(w0 * w1) * reduced_matrix(b0, b1, site)
        return matrix_pair_from_reduced(r00, r11, r10)

    def _compute(self, record):
        return basis_from_pair(self.matrix_pair(record), record, self)


def sample_mps(state: MatrixProductState, provider: BasisProvider, rng: np.random.Generator) -> MeasurementRecord:
    """Sequential Born-rule sampling by repeated single-site projection."""
    record = provider.empty_record()
    cur = state
    for _ in range(provider.n):
        basis = provider.next_basis(record)
        site = cur.labels.index(record.next_qubit())
        s0, w0 = project_qubit(cur, site, basis.e0)
        u = rng.random()
        if u < w0:
            cur, bit = s0, 0
        else:
            cur, _ = project_qubit(cur, site, basis.e1)
            bit = 1
        record = record.extended(basis, bit)
    return record


def mps_outcome_distribution(state: MatrixProductState, provider: BasisProvider) -> np.ndarray:
    """Exact outcome distribution of sequential projections (x_1 most significant)."""
    n = provider.n
    out = np.zeros(2**n)

    def walk(record, cur, prob, index):
        if len(record.outcomes) == n:
            out[index] = prob
            return
        basis = provider.next_basis(record)
        site = cur.labels.index(record.next_qubit())
        for bit in (0, 1):
            try:
                nxt, w = project_qubit(cur, site, basis.vector(bit))
            except DegenerateBranchError:
                continue
            walk(record.extended(basis, bit), nxt, prob * w, 2 * index + bit)

    walk(provider.empty_record(), state, 1.0, 0)
    return out


# ----------------------------------------------------------------------------
# checkpoint format


def dumps_mps(state: MatrixProductState) -> str:
    """Text checkpoint: shape headers plus hex-encoded complex128 data and a SHA-256 footer."""
    lines = ["HLMPS 1", f"sites {state.n}", f"labels {' '.join(map(str, state.labels))}",
             f"center {'-' if state.center is None else state.center}", f"trunc_error {state.trunc_error.hex()}"]
    for i, a in enumerate(state.tensors):
        a = np.ascontiguousarray(a, dtype=np.complex128)
        lines.append(f"tensor {i} {a.shape[0]} {a.shape[1]} {a.shape[2]}")
        lines.append(a.tobytes().hex())
    body = "\n".join(lines) + "\n"
    digest = hashlib.sha256(body.encode()).hexdigest()
    return body + f"sha256 {digest}\n"


def loads_mps(text: str) -> MatrixProductState:
    body, _, footer = text.rstrip("\n").rpartition("\n")
    body += "\n"
    if not footer.startswith("sha256 "):
        raise ValidationError("checkpoint missing checksum footer")
    if hashlib.sha256(body.encode()).hexdigest() != footer.split()[1]:
        raise ValidationError("checkpoint checksum mismatch")
    lines = body.splitlines()
    if lines[0] != "HLMPS 1":
        raise ValidationError("not an MPS checkpoint")
    n = int(lines[1].split()[1])
    labels = tuple(int(x) for x in lines[2].split()[1:])
    c = lines[3].split()[1]
    center = None if c == "-" else int(c)
    err = float.fromhex(lines[4].split()[1])
    ts = []
    for i in range(n):
        head = lines[5 + 2 * i].split()
        if head[0] != "tensor" or int(head[1]) != i:
            raise ValidationError(f"bad tensor header {head}")
        shape = tuple(int(x) for x in head[2:5])
        data = np.frombuffer(bytes.fromhex(lines[6 + 2 * i]), dtype=np.complex128)
        ts.append(data.reshape(shape).copy())
    return MatrixProductState(tuple(ts), labels, center, err)


def fidelity(a: MatrixProductState, psi: np.ndarray) -> float:
    v = a.to_dense()
    return float(abs(np.vdot(v, psi)) ** 2 / (np.vdot(v, v).real * np.vdot(psi, psi).real))


def random_mps(n: int, d: int, rng: np.random.Generator) -> MatrixProductState:
    ts = []
    for i in range(n):
        dl = 1 if i == 0 else d
        dr = 1 if i == n - 1 else d
        ts.append(rng.normal(size=(dl, 2, dr)) + 1j * rng.normal(size=(dl, 2, dr)))
    return canonicalize(MatrixProductState(tuple(ts), tuple(range(n))), 0)


def gauge_transform(state: MatrixProductState, rng: np.random.Generator) -> MatrixProductState:
    """Insert random invertible G G^{-1} on every internal bond."""
    ts = list(state.tensors)
    for i in range(len(ts) - 1):
        d = ts[i].shape[2]
        g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)) + 3 * np.eye(d)
        ts[i] = np.tensordot(ts[i], g, axes=([2], [0]))
        ts[i + 1] = np.tensordot(np.linalg.inv(g), ts[i + 1], axes=([1], [0]))
    return MatrixProductState(tuple(ts), state.labels, None, state.trunc_error)
