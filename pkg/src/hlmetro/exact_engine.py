"""Dense state-vector simulation used as ground truth by every other module."""
from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import expm_multiply

from .errors import DegenerateBranchError, StructureError
from .pauli_graph import (
    DENSE_CAP,
    PauliString,
    PerturbedHamiltonian,
    TimeDependentHamiltonian,
    assemble_dense,
    assemble_sparse,
    field_diagonal,
)

ZERO_WEIGHT = 1e-14
# above this size single-vector evolution goes through a sparse Krylov solver
KRYLOV_FROM = 11


def n_qubits(state: np.ndarray) -> int:
    n = int(round(np.log2(state.shape[0])))
    if 2**n != state.shape[0]:
        raise StructureError(f"state length {state.shape[0]} is not a power of two")
    return n


def basis_state(bits: Sequence[int]) -> np.ndarray:
    n = len(bits)
    v = np.zeros(2**n, dtype=complex)
    v[int("".join(str(int(b)) for b in bits), 2) if n else 0] = 1.0
    return v


def product_state(vectors: Sequence[np.ndarray]) -> np.ndarray:
    v = np.array([1.0 + 0j])
    for q in vectors:
        v = np.kron(v, np.asarray(q, dtype=complex))
    return v


class Spectrum:
    """Cached eigendecomposition of one dense Hamiltonian."""

    def __init__(self, H: PerturbedHamiltonian, cap: int = DENSE_CAP):
        self.H = H
        self.n = H.n
        mat = assemble_dense(H, cap)
        self.energies, self.vectors = np.linalg.eigh(mat)

    def propagator(self, t: float) -> np.ndarray:
        return (self.vectors * np.exp(-1j * t * self.energies)) @ self.vectors.conj().T

    def evolve(self, state: np.ndarray, t: float) -> np.ndarray:
        if state.shape[0] != self.vectors.shape[0]:
            raise StructureError("state and Hamiltonian dimensions differ")
        c = self.vectors.conj().T @ state
        return self.vectors @ (np.exp(-1j * t * self.energies) * c)

    def time_average(self, op: np.ndarray, t: float) -> np.ndarray:
        """(1/t) int_0^t e^{isH} op e^{-isH} ds, exact in the eigenbasis (op dense or diagonal)."""
        W = self.vectors
        if op.ndim == 1:
            op_e = (W.conj().T * op) @ W
        else:
            op_e = W.conj().T @ op @ W
        gap = self.energies[:, None] - self.energies[None, :]
        op_e = op_e * phase_average(gap * t)
        return W @ op_e @ W.conj().T

    def heisenberg(self, op: np.ndarray, s: float) -> np.ndarray:
        U = self.propagator(s)
        if op.ndim == 1:
            return (U.conj().T * op) @ U
        return U.conj().T @ op @ U


def phase_average(x: np.ndarray) -> np.ndarray:
    """(e^{ix} - 1)/(ix) with the removable point at x = 0 handled by a series."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    safe = np.where(small, 1.0, x)
    out = (np.exp(1j * safe) - 1.0) / (1j * safe)
    series = 1 + 1j * x / 2 - x**2 / 6 - 1j * x**3 / 24
    return np.where(small, series, out)


@lru_cache(maxsize=64)
def spectrum(H: PerturbedHamiltonian) -> Spectrum:
    return Spectrum(H)


def evolve(state: np.ndarray, H: PerturbedHamiltonian, t: float) -> np.ndarray:
    """e^{-itH}|state> through the cached eigendecomposition."""
    if state.shape[0] != 2**H.n:
        raise StructureError(f"state of length {state.shape[0]} for {H.n}-qubit Hamiltonian")
    if t == 0:
        return np.array(state, dtype=complex)
    if H.n >= KRYLOV_FROM:
        return expm_multiply(-1j * t * assemble_sparse(H), np.asarray(state, dtype=complex))
    return spectrum(H).evolve(state, t)


def evolve_time_dependent(state: np.ndarray, Hs: TimeDependentHamiltonian, t: float, steps: int | None = None) -> np.ndarray:
    """Midpoint-rule time-ordered product of step propagators."""
    if steps is None:
        steps = max(1, int(np.ceil(abs(t) * max(Hs.j_tilde, 1e-12) * len(Hs.terms) / 1e-3)))
    if steps < 1:
        raise ValueError("steps must be >= 1")
    comps = Hs.harmonic_dense()
    ds = t / steps
    psi = np.array(state, dtype=complex)
    for j in range(steps):
        s = (j + 0.5) * ds
        Hm = sum(np.exp(1j * k * Hs.base * s) * m for k, m in comps.items())
        w, v = np.linalg.eigh(Hm)
        psi = v @ (np.exp(-1j * ds * w) * (v.conj().T @ psi))
    return psi


def expect(state: np.ndarray, op) -> complex:
    """<state|op|state> for a PauliString, a dense matrix or a diagonal vector."""
    if isinstance(op, PauliString):
        return complex(np.vdot(state, op.apply(state, n_qubits(state))))
    op = np.asarray(op)
    if op.ndim == 1:
        return complex(np.vdot(state, op * state))
    return complex(np.vdot(state, op @ state))


def total_z(n: int) -> np.ndarray:
    return field_diagonal(n)


def parity_x_expectation(state: np.ndarray) -> float:
    n = n_qubits(state)
    return expect(state, PauliString.make([(q, "X") for q in range(n)])).real


# ----------------------------------------------------------------------------
# measurement-conditioned quantities


def _as_tensor(state: np.ndarray, n: int) -> np.ndarray:
    return np.asarray(state, dtype=complex).reshape((2,) * n)


def project(state: np.ndarray, record: Sequence[tuple[int, np.ndarray]], n: int | None = None):
    """Contract measured qubits with <e| and return (tensor over the others, remaining qubit list).

    ``record`` is a sequence of (qubit, basis vector e) pairs.
    """
    n = n_qubits(state) if n is None else n
    psi = _as_tensor(state, n)
    qubits = list(range(n))
    for q, e in record:
        ax = qubits.index(q)
        psi = np.tensordot(np.conj(np.asarray(e, dtype=complex)), psi, axes=([0], [ax]))
        qubits.pop(ax)
    return psi, qubits


def branch_weight(state: np.ndarray, record) -> float:
    psi, _ = project(state, record)
    return float(np.vdot(psi, psi).real)


def reduced_cross(bra_state: np.ndarray, ket_state: np.ndarray, record, target: int) -> np.ndarray:
    """Tr_rest( E |ket><bra| E ) on ``target`` (unnormalized 2x2)."""
    a, qa = project(ket_state, record)
    b, _ = project(bra_state, record)
    ax = qa.index(target)
    a = np.moveaxis(a, ax, 0).reshape(2, -1)
    b = np.moveaxis(b, ax, 0).reshape(2, -1)
    return a @ b.conj().T


def conditioned_reduced_density(state: np.ndarray, record, target: int) -> tuple[np.ndarray, float]:
    """Normalized reduced density matrix of ``target`` given the projected record, and the weight."""
    if any(q == target for q, _ in record):
        raise StructureError(f"target qubit {target} already measured")
    rho = reduced_cross(state, state, record, target)
    w = float(np.trace(rho).real)
    if w < ZERO_WEIGHT:
        raise DegenerateBranchError(f"record has weight {w:.3e}")
    return rho / w, w


def heisenberg_deviation(H: PerturbedHamiltonian, op, s: float) -> float:
    """Largest singular value of e^{isH} O e^{-isH} - O."""
    sp = spectrum(H)
    if isinstance(op, PauliString):
        op = op.dense(H.n)
    op = np.asarray(op)
    dense = np.diag(op) if op.ndim == 1 else op
    diff = sp.heisenberg(op, s) - dense
    return float(np.linalg.norm(diff, 2))


def operator_norm(m: np.ndarray) -> float:
    return float(np.linalg.norm(m, 2))


def expm_hermitian(H: np.ndarray, t: float) -> np.ndarray:
    return sla.expm(-1j * t * H)
