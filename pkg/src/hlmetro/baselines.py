"""Control protocols: the naive x-basis readout under V = J sum X, and the time-reversal readout."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize_scalar
from scipy.special import gammaln

from .errors import DomainError, NumericalAssertionError, StructureError, ValidationError
from .exact_engine import evolve, n_qubits, parity_x_expectation, total_z
from .initial_states import make_ghz
from .pauli_graph import PerturbedHamiltonian, transverse_field
from .streams import stream

_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_PLUS = np.array([1, 1], dtype=complex) / math.sqrt(2)
_MINUS = np.array([1, -1], dtype=complex) / math.sqrt(2)
_HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)

NAIVE_DENSE_CAP = 8


@dataclass(frozen=True)
class TiltedRotationParams:
    omega: float
    J: float
    t: float
    eta0: float
    f_eta: float

    def __post_init__(self):
        if not -1e-12 <= self.eta0 <= 1 + 1e-12:
            raise ValidationError(f"eta0 = {self.eta0} outside [0, 1]")
        if self.f_eta > 1 + 1e-12:
            raise NumericalAssertionError(f"f(eta0) = {self.f_eta} exceeds 1")


def single_qubit_branches(omega: float, J: float, t: float) -> tuple[np.ndarray, np.ndarray]:
    """phi_a = exp(-it(omega Z + J X))|a> for a = 0, 1."""
    U = expm(-1j * t * (omega * _Z + J * _X))
    return U[:, 0].copy(), U[:, 1].copy()


def recurrence_time(omega: float, J: float, t: float, tol: float = 1e-9) -> bool:
    """True when t is (numerically) a multiple of pi / sqrt(omega^2 + J^2)."""
    rate = math.hypot(omega, J)
    if rate == 0:
        return True
    k = t * rate / math.pi
    return abs(k - round(k)) < tol


def tilted_params(omega: float, J: float, t: float) -> TiltedRotationParams:
    phi0, _ = single_qubit_branches(omega, J, t)
    eta0 = float(abs(np.vdot(_PLUS, phi0)))
    eta0 = min(eta0, 1.0)
    return TiltedRotationParams(omega, J, t, eta0, 2 * eta0 * math.sqrt(max(0.0, 1 - eta0**2)))


@dataclass(frozen=True)
class NaiveDistribution:
    """x-basis outcome law of the evolved GHZ state, binned by the number of '+' outcomes.

    ``p[k]`` and ``p_mix[k]`` are per-string probabilities for a string with k plus
    outcomes; there are C(N, k) such strings.
    """

    n: int
    params: TiltedRotationParams
    p: np.ndarray
    p_mix: np.ndarray
    coherence: np.ndarray
    recurrent: bool

    @property
    def multiplicity(self) -> np.ndarray:
        k = np.arange(self.n + 1)
        return np.exp(gammaln(self.n + 1) - gammaln(k + 1) - gammaln(self.n - k + 1))

    def l1_distance(self) -> float:
        """sum over all strings of |p - p_mix|."""
        return float(np.dot(self.multiplicity, np.abs(self.p - self.p_mix)))

    def coherence_l1(self) -> float:
        """sum over strings of |<x|phi0^N><x|phi1^N>|, the bound on ``l1_distance``."""
        return float(np.dot(self.multiplicity, np.abs(self.coherence)))

    def bound(self) -> float:
        return self.params.f_eta**self.n

    def expand(self) -> tuple[np.ndarray, np.ndarray]:
        """Full 2^N vectors (p, p_mix) with qubit 0 as the most significant bit; bit 0 is '+'."""
        if self.n > 20:
            raise DomainError("expanding beyond 20 qubits is not supported")
        idx = np.arange(2**self.n)
        minus = np.zeros(2**self.n, dtype=int)
        for q in range(self.n):
            minus += (idx >> q) & 1
        plus = self.n - minus
        return self.p[plus], self.p_mix[plus]


def naive_distribution(n: int, omega: float, J: float, t: float) -> NaiveDistribution:
    """Closed form for V = J sum_j X_j: every amplitude depends only on the '+' count."""
    if n < 1:
        raise ValidationError("N must be positive")
    phi0, phi1 = single_qubit_branches(omega, J, t)
    u0, v0 = np.vdot(_PLUS, phi0), np.vdot(_MINUS, phi0)
    u1, v1 = np.vdot(_PLUS, phi1), np.vdot(_MINUS, phi1)
    k = np.arange(n + 1)
    a0 = u0**k * v0 ** (n - k)
    a1 = u1**k * v1 ** (n - k)
    p = 0.5 * np.abs(a0 + a1) ** 2
    p_mix = 0.5 * (np.abs(a0) ** 2 + np.abs(a1) ** 2)
    return NaiveDistribution(n, tilted_params(omega, J, t), p, p_mix, a0.conj() * a1, recurrence_time(omega, J, t))


def naive_distribution_dense(n: int, omega: float, J: float, t: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Dense oracle: (p, p_mix, sum_x |coherence|) from full state vectors."""
    if n > NAIVE_DENSE_CAP:
        raise DomainError(f"dense oracle limited to N <= {NAIVE_DENSE_CAP}")
    H = transverse_field(n, J, omega)
    g = make_ghz(n)
    b0 = _to_x_basis(evolve(g.branch0, H, t), n)
    b1 = _to_x_basis(evolve(g.branch1, H, t), n)
    p = 0.5 * np.abs(b0 + b1) ** 2
    p_mix = 0.5 * (np.abs(b0) ** 2 + np.abs(b1) ** 2)
    return p, p_mix, float(np.abs(b0.conj() * b1).sum())


def _to_x_basis(psi: np.ndarray, n: int) -> np.ndarray:
    out = psi.reshape((2,) * n)
    for ax in range(n):
        out = np.moveaxis(np.tensordot(_HADAMARD, out, axes=([1], [ax])), 0, ax)
    return out.reshape(-1)


def tv_distance(p, q) -> float:
    """sum |p - q| (the 1-norm, no factor 1/2)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise StructureError(f"distributions of shape {p.shape} and {q.shape}")
    return float(np.abs(p - q).sum())


# ----------------------------------------------------------------------------
# naive readout campaign (maximum likelihood on the '+' count)


def naive_log_likelihood(counts: np.ndarray, omega: float, J: float, t: float) -> float:
    n = len(counts) - 1
    d = naive_distribution(n, omega, J, t)
    prob = np.maximum(d.multiplicity * d.p, 1e-300)
    return float(np.dot(counts, np.log(prob)))


def naive_mle(counts: np.ndarray, J: float, t: float, window: tuple[float, float], grid: int = 201) -> float:
    """Maximize the count likelihood over omega in ``window`` (grid search, then Brent refinement)."""
    lo, hi = window
    om = np.linspace(lo, hi, grid)
    ll = np.array([naive_log_likelihood(counts, o, J, t) for o in om])
    i = int(np.argmax(ll))
    a, b = om[max(i - 1, 0)], om[min(i + 1, grid - 1)]
    if a == b:
        return float(om[i])
    res = minimize_scalar(lambda o: -naive_log_likelihood(counts, o, J, t), bounds=(a, b), method="bounded",
                          options={"xatol": 1e-12 * max(1.0, abs(hi))})
    return float(res.x)


def naive_counts(n: int, omega: float, J: float, t: float, m: int, rng: np.random.Generator) -> np.ndarray:
    """Histogram of '+' counts over m x-basis measurements of the evolved GHZ state."""
    d = naive_distribution(n, omega, J, t)
    w = d.multiplicity * d.p
    return rng.multinomial(m, w / w.sum())


def naive_campaign(n: int, omega: float, J: float, t: float, m: int, repeats: int, seed: int,
                   window: float = 0.05) -> dict:
    """Repeat the naive estimate and report the root-mean-square error.

    The search window is fixed in omega (not shrinking with N) so the estimator is
    not handed Heisenberg-scale prior knowledge.
    """
    ests = np.empty(repeats)
    for r in range(repeats):
        rng = stream(seed, n, r)
        counts = naive_counts(n, omega, J, t, m, rng)
        ests[r] = naive_mle(counts, J, t, (omega - window, omega + window))
    err = ests - omega
    return {"N": n, "delta_omega": float(np.sqrt(np.mean(err**2))), "bias": float(err.mean()),
            "M": m, "repeats": repeats}


# ----------------------------------------------------------------------------
# time-reversal readout


def _reversal(psi: np.ndarray, H: PerturbedHamiltonian, omega_prime: float, t: float) -> np.ndarray:
    """R psi with R = exp(-it omega' Z) exp(it H_omega')."""
    n = n_qubits(psi)
    back = evolve(psi, H.with_omega(omega_prime), -t)
    return np.exp(-1j * t * omega_prime * total_z(n)) * back


def undo_protocol_expectation(H: PerturbedHamiltonian, omega_true: float, omega_prime: float, t: float,
                              psi_in: np.ndarray | None = None, check: bool = True) -> float:
    """<psi_omega| R^dag X...X R |psi_omega> for the GHZ input (by default)."""
    n = H.n
    psi_in = make_ghz(n).combined() if psi_in is None else psi_in
    psi = evolve(psi_in, H.with_omega(omega_true), t)
    val = parity_x_expectation(_reversal(psi, H, omega_prime, t))
    if check:
        J = H.local_strength
        dev = abs(val - math.cos(2 * n * omega_true * t))
        if abs(omega_true - omega_prime) <= math.pi / (4 * n * t) * (1 + 1e-12) and dev > math.pi * J * t / 2 + 1e-10:
            raise NumericalAssertionError(f"reversal deviation {dev:.3g} above pi J t / 2")
    return val


def undo_slope_bound(n: int, omega: float, J: float, t: float) -> float:
    """N t [2 |sin(2 N omega t)| - (pi + 2) J t]; vacuous when not positive."""
    return n * t * (2 * abs(math.sin(2 * n * omega * t)) - (math.pi + 2) * J * t)


def undo_protocol_slope(H: PerturbedHamiltonian, omega_true: float, omega_prime: float, t: float,
                        psi_in: np.ndarray | None = None, check: bool = True) -> float:
    """|d/d omega <X_omega'>| by central difference with step 1e-6 of the prior half-width."""
    n = H.n
    h = 1e-6 * math.pi / (4 * n * t)
    up = undo_protocol_expectation(H, omega_true + h, omega_prime, t, psi_in, check=False)
    dn = undo_protocol_expectation(H, omega_true - h, omega_prime, t, psi_in, check=False)
    slope = abs(up - dn) / (2 * h)
    if check:
        rhs = undo_slope_bound(n, omega_true, H.local_strength, t)
        if rhs > 0 and slope < rhs - 1e-6 * n * t:
            raise NumericalAssertionError(f"slope {slope:.6g} below bound {rhs:.6g}")
    return slope
