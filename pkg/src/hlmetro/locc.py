"""Adaptive one-qubit-at-a-time measurement: basis rule, sampler, parity estimator, bisection readout."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateBranchError, NumericalAssertionError, ValidationError
from .exact_engine import ZERO_WEIGHT, evolve, n_qubits, reduced_cross
from .initial_states import SuperposedPair
from .metrology import PriorInterval
from .pauli_graph import PerturbedHamiltonian

log = logging.getLogger(__name__)

_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_I = np.eye(2, dtype=complex)

# decisions below this relative size are treated as ties; backends that agree
# to better than this make identical basis choices
AXIS_TOL = 1e-9


class DegenerateBasisError(NumericalAssertionError):
    """Both matrices vanish, so any basis zero-diagonalizes them."""


def _fix_phase(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v) > 1e-12))
    return v * np.exp(-1j * np.angle(v[k]))


@dataclass(frozen=True)
class QubitBasis:
    e0: np.ndarray
    e1: np.ndarray

    @staticmethod
    def from_axis(n: np.ndarray) -> "QubitBasis":
        """Eigenbasis of n.sigma, e0 the +1 eigenvector."""
        n = np.asarray(n, dtype=float)
        n = n / np.linalg.norm(n)
        theta = math.acos(max(-1.0, min(1.0, n[2])))
        phi = math.atan2(n[1], n[0])
        e0 = np.array([math.cos(theta / 2), np.exp(1j * phi) * math.sin(theta / 2)])
        e1 = np.array([math.sin(theta / 2), -np.exp(1j * phi) * math.cos(theta / 2)])
        return QubitBasis(_fix_phase(e0), _fix_phase(e1))

    def swapped(self) -> "QubitBasis":
        return QubitBasis(self.e1, self.e0)

    def vector(self, bit: int) -> np.ndarray:
        return self.e1 if bit else self.e0

    @property
    def axis(self) -> np.ndarray:
        return 2 * bloch(np.outer(self.e0, self.e0.conj()))

    def angles(self) -> tuple[float, float]:
        n = self.axis
        return float(math.acos(max(-1.0, min(1.0, n[2])))), float(math.atan2(n[1], n[0]))


X_BASIS = QubitBasis(np.array([1, 1]) / np.sqrt(2) + 0j, np.array([1, -1]) / np.sqrt(2) + 0j)
Z_BASIS = QubitBasis(np.array([1, 0], dtype=complex), np.array([0, 1], dtype=complex))


def bloch(A: np.ndarray) -> np.ndarray:
    """Real vector a with the traceless Hermitian part of A equal to a.sigma (A=rho gives 2x Bloch/2)."""
    return np.real([np.trace(A @ _X), np.trace(A @ _Y), np.trace(A @ _Z)]) / 2


def _orient(n: np.ndarray) -> np.ndarray:
    for k in (2, 0, 1):
        if abs(n[k]) > AXIS_TOL:
            return n if n[k] > 0 else -n
    return n


def _perpendicular(v: np.ndarray) -> np.ndarray:
    """Rotate v's polar angle by pi/2 at fixed azimuth."""
    v = v / np.linalg.norm(v)
    theta = math.acos(max(-1.0, min(1.0, v[2])))
    phi = math.atan2(v[1], v[0]) if abs(v[0]) + abs(v[1]) > AXIS_TOL else 0.0
    th = theta + math.pi / 2
    return np.array([math.sin(th) * math.cos(phi), math.sin(th) * math.sin(phi), math.cos(th)])


def _clean(v: np.ndarray, scale: float) -> np.ndarray:
    v = np.array(v, dtype=float)
    v[np.abs(v) < AXIS_TOL * scale] = 0.0
    return v


def zero_diagonalize(A: np.ndarray, B: np.ndarray, sign_selector: int = 1, Mt_ref: np.ndarray | None = None,
                     tol: float = AXIS_TOL) -> QubitBasis:
    """Basis in which both traceless Hermitian 2x2 matrices have zero diagonal.

    The axis is a x b for the Bloch vectors a, b. Labels are chosen so that
    sign(Im <e0|Mt_ref|e0>) equals ``sign_selector`` whenever that is decidable.
    """
    a, b = bloch(A), bloch(B)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < tol:
        raise DegenerateBasisError("both matrices vanish")
    a, b = _clean(a / scale, 1.0), _clean(b / scale, 1.0)
    cross = np.cross(a, b)
    if np.linalg.norm(cross) < tol:
        v = a if np.linalg.norm(a) >= np.linalg.norm(b) else b
        n = _perpendicular(v)
    else:
        n = cross / np.linalg.norm(cross)
    basis = QubitBasis.from_axis(_orient(_clean(n, 1.0)))
    if Mt_ref is not None:
        s0 = np.vdot(basis.e0, Mt_ref @ basis.e0).imag
        s1 = np.vdot(basis.e1, Mt_ref @ basis.e1).imag
        ref = max(np.abs(Mt_ref).max(), np.abs(A).max(), np.abs(B).max())
        if abs(s0 - s1) > tol * ref and sign_selector * (s0 - s1) < 0:
            basis = basis.swapped()
    return basis


@dataclass(frozen=True)
class MatrixPair:
    M: np.ndarray
    Mt: np.ndarray
    weight: float

    def traceless(self) -> tuple[np.ndarray, np.ndarray]:
        A = self.M - np.trace(self.M) / 2 * _I
        B = self.Mt + self.Mt.conj().T
        B = B - np.trace(B) / 2 * _I
        return A, B


def matrix_pair_from_reduced(r00: np.ndarray, r11: np.ndarray, r10: np.ndarray) -> MatrixPair:
    """Normalize branch-reduced matrices by the mean branch weight.

    r00, r11 are Tr_rest(E|phi^a><phi^a|E); r10 is Tr_rest(E|phi^1><phi^0|E).
    """
    w = 0.5 * float(np.trace(r00).real + np.trace(r11).real)
    if w < ZERO_WEIGHT:
        raise DegenerateBranchError(f"record weight {w:.3e}")
    return MatrixPair((r00 - r11) / w, r10 / w, w)


# ----------------------------------------------------------------------------
# measurement records and providers


@dataclass(frozen=True)
class MeasurementRecord:
    outcomes: tuple = ()
    bases: tuple = ()
    order: tuple = ()

    def __post_init__(self):
        if len(self.outcomes) != len(self.bases):
            raise ValidationError("outcomes and bases differ in length")

    @property
    def parity(self) -> int:
        return -1 if sum(self.outcomes) % 2 else 1

    def pairs(self) -> list[tuple[int, np.ndarray]]:
        """(qubit, projected vector) for each measured qubit."""
        return [(self.order[i], b.vector(x)) for i, (x, b) in enumerate(zip(self.outcomes, self.bases))]

    def extended(self, basis: QubitBasis, bit: int) -> "MeasurementRecord":
        return MeasurementRecord(self.outcomes + (int(bit),), self.bases + (basis,), self.order)

    def next_qubit(self) -> int:
        return self.order[len(self.outcomes)]


class BasisProvider:
    """Maps a measurement prefix to the next qubit's basis. Deterministic and cached."""

    backend = "fixed"

    def __init__(self, n: int, order: Sequence[int] | None = None):
        self.n = n
        self.order = tuple(order) if order is not None else tuple(range(n))
        if sorted(self.order) != list(range(n)):
            raise ValidationError("measurement order must be a permutation of the qubits")
        self._cache: dict[tuple, QubitBasis] = {}

    def empty_record(self) -> MeasurementRecord:
        return MeasurementRecord((), (), self.order)

    def next_basis(self, record: MeasurementRecord) -> QubitBasis:
        key = record.outcomes
        got = self._cache.get(key)
        if got is None:
            got = self._compute(record)
            self._cache[key] = got
        return got

    def _compute(self, record: MeasurementRecord) -> QubitBasis:
        raise NotImplementedError


class FixedBasisProvider(BasisProvider):
    """Same basis (or a per-qubit list) regardless of earlier outcomes."""

    def __init__(self, n: int, basis: QubitBasis | Sequence[QubitBasis] = X_BASIS, order=None):
        super().__init__(n, order)
        self.bases = [basis] * n if isinstance(basis, QubitBasis) else list(basis)

    def _compute(self, record):
        return self.bases[record.next_qubit()]


class FunctionBasisProvider(BasisProvider):
    """Wrap a callable ``f(record) -> QubitBasis``."""

    def __init__(self, n: int, fn: Callable[[MeasurementRecord], QubitBasis], order=None, backend="fixed"):
        super().__init__(n, order)
        self.fn = fn
        self.backend = backend

    def _compute(self, record):
        return self.fn(record)


class ExactBasisProvider(BasisProvider):
    """The zero-diagonalization rule evaluated on dense branch states at the known field."""

    backend = "exact"

    def __init__(self, phi0: np.ndarray, phi1: np.ndarray, order=None):
        super().__init__(n_qubits(phi0), order)
        self.phi0 = np.asarray(phi0, dtype=complex)
        self.phi1 = np.asarray(phi1, dtype=complex)
        self.fallbacks = 0

    @staticmethod
    def from_hamiltonian(pair: SuperposedPair, H: PerturbedHamiltonian, t: float, omega_prime: float, order=None):
        Hp = H.with_omega(omega_prime)
        return ExactBasisProvider(evolve(pair.branch0, Hp, t), evolve(pair.branch1, Hp, t), order)

    def matrix_pair(self, record: MeasurementRecord) -> MatrixPair:
        rec = record.pairs()
        target = record.next_qubit()
        r00 = reduced_cross(self.phi0, self.phi0, rec, target)
        r11 = reduced_cross(self.phi1, self.phi1, rec, target)
        r10 = reduced_cross(self.phi0, self.phi1, rec, target)
        return matrix_pair_from_reduced(r00, r11, r10)

    def _compute(self, record):
        return basis_from_pair(self.matrix_pair(record), record, self)


def basis_from_pair(mp: MatrixPair, record: MeasurementRecord, provider=None) -> QubitBasis:
    A, B = mp.traceless()
    try:
        return zero_diagonalize(A, B, record.parity, mp.Mt)
    except DegenerateBasisError:
        if provider is not None and hasattr(provider, "fallbacks"):
            provider.fallbacks += 1
        log.info("basis underdetermined after %s; using x basis", record.outcomes)
        return X_BASIS


# ----------------------------------------------------------------------------
# enumeration and sampling


def string_amplitudes(provider: BasisProvider, states: Sequence[np.ndarray]) -> np.ndarray:
    """<E_x|psi_k> for every outcome string x (x_1 is the most significant bit).

    Walks the measurement tree depth first, projecting each state as it goes.
    """
    n = provider.n
    states = [np.asarray(s, dtype=complex) for s in states]
    out = np.zeros((len(states), 2**n), dtype=complex)

    def walk(record: MeasurementRecord, tensors, qubits, index):
        depth = len(record.outcomes)
        if depth == n:
            for k, t in enumerate(tensors):
                out[k, index] = complex(t)
            return
        basis = provider.next_basis(record)
        q = record.next_qubit()
        ax = qubits.index(q)
        rest = qubits[:ax] + qubits[ax + 1:]
        for bit in (0, 1):
            e = basis.vector(bit).conj()
            nxt = [np.tensordot(e, t, axes=([0], [ax])) for t in tensors]
            walk(record.extended(basis, bit), nxt, rest, 2 * index + bit)

    walk(provider.empty_record(), [s.reshape((2,) * n) for s in states], list(range(n)), 0)
    return out


def string_parities(n: int) -> np.ndarray:
    idx = np.arange(2**n)
    pop = np.zeros(2**n, dtype=int)
    for q in range(n):
        pop += (idx >> q) & 1
    return 1 - 2 * (pop % 2)


def outcome_distribution(provider: BasisProvider, state: np.ndarray) -> np.ndarray:
    amp = string_amplitudes(provider, [state])[0]
    return np.abs(amp) ** 2


def parity_expectation(provider: BasisProvider, state: np.ndarray) -> float:
    p = outcome_distribution(provider, state)
    return float(np.dot(string_parities(provider.n), p))


def verify_basis_condition(provider: BasisProvider, pair_states, n: int | None = None) -> float:
    """max_x |<E_x|phi1> - (-1)^{|x|} i <E_x|phi0>|."""
    phi0, phi1 = pair_states
    amp = string_amplitudes(provider, [phi0, phi1])
    sgn = string_parities(provider.n)
    return float(np.max(np.abs(amp[1] - sgn * 1j * amp[0])))


def povm_completeness(provider: BasisProvider) -> float:
    """||sum_x |E_x><E_x| - I|| via the amplitudes of all computational basis states."""
    n = provider.n
    eye = np.eye(2**n, dtype=complex)
    amp = string_amplitudes(provider, list(eye))  # amp[k, x] = <E_x|k>
    gram = amp.conj() @ amp.T  # sum_x <k|E_x><E_x|l>
    return float(np.abs(gram - eye).max())


def adaptive_measure(state: np.ndarray, provider: BasisProvider, rng: np.random.Generator) -> MeasurementRecord:
    """Sample one outcome string, one qubit at a time, from the Born rule."""
    n = provider.n
    record = provider.empty_record()
    psi = np.asarray(state, dtype=complex).reshape((2,) * n)
    qubits = list(range(n))
    for _ in range(n):
        basis = provider.next_basis(record)
        q = record.next_qubit()
        ax = qubits.index(q)
        branch = [np.tensordot(basis.vector(b).conj(), psi, axes=([0], [ax])) for b in (0, 1)]
        w = np.array([np.vdot(x, x).real for x in branch])
        p0 = w[0] / w.sum()
        bit = int(rng.random() >= p0)
        psi = branch[bit] / math.sqrt(w[bit])
        qubits.pop(ax)
        record = record.extended(basis, bit)
    return record


def phase_shifted_state(phi0: np.ndarray, phi1: np.ndarray, f: float) -> np.ndarray:
    """(e^{-if/2} phi0 + e^{if/2} phi1)/sqrt(2)."""
    return (np.exp(-0.5j * f) * phi0 + np.exp(0.5j * f) * phi1) / math.sqrt(2)


# ----------------------------------------------------------------------------
# readout


@dataclass(frozen=True)
class BisectionResult:
    omega: float
    calls: int
    clamped: bool = False


def statistical_tolerance(m: int) -> float:
    return math.pi / (2 * math.sqrt(m))


def bisection_call_budget(width: float, tol: float) -> int:
    return math.ceil(math.log2(width / tol)) + 2 if width > tol else 2


def estimate_omega(P_hat: float, P_prime: float, f_oracle: Callable[[float], float], prior: PriorInterval,
                   tol: float, match_tol: float = 0.0) -> BisectionResult:
    """Solve -sin f(w) = P_hat - P_prime on the prior interval by bisection on the monotone f."""
    target = P_hat - P_prime
    clamped = False
    if abs(target) > 1:
        log.warning("parity difference %.3g clamped to [-1, 1]", target)
        target = max(-1.0, min(1.0, target))
        clamped = True
    f_star = -math.asin(target)
    lo, hi = prior.lo, prior.hi
    calls = 0
    mid = 0.5 * (lo + hi)
    f_mid = f_oracle(mid)
    calls += 1
    if abs(f_mid - f_star) <= match_tol:
        return BisectionResult(mid, calls, clamped)
    f_lo = f_hi = None
    while hi - lo >= tol:
        if f_mid < f_star:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
        if f_lo is not None and f_hi is not None and f_lo > f_hi:
            raise NumericalAssertionError("phase function is not monotone on the prior interval")
        mid = 0.5 * (lo + hi)
        if hi - lo < tol:
            break
        f_mid = f_oracle(mid)
        calls += 1
        if abs(f_mid - f_star) <= match_tol:
            return BisectionResult(mid, calls, clamped)
    return BisectionResult(mid, calls, clamped)
