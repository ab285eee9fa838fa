"""Fisher information, the phase function f(omega), precision limits and perturbation bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from threading import Lock

import numpy as np
from numpy.polynomial import chebyshev as C
from numpy.polynomial.legendre import leggauss

from .errors import DomainError, NumericalAssertionError
from .exact_engine import Spectrum, evolve, n_qubits, phase_average, spectrum, total_z
from .initial_states import SuperposedPair
from .pauli_graph import PerturbedHamiltonian


@dataclass(frozen=True)
class PriorInterval:
    omega_prime: float
    n: int
    t: float

    @property
    def half_width(self) -> float:
        return math.pi / (4 * self.n * self.t)

    @property
    def lo(self) -> float:
        return self.omega_prime - self.half_width

    @property
    def hi(self) -> float:
        return self.omega_prime + self.half_width

    def contains(self, omega: float, slack: float = 1e-12) -> bool:
        return self.lo - slack <= omega <= self.hi + slack

    @staticmethod
    def around(omega: float, n: int, t: float) -> "PriorInterval":
        """The interval whose centre is pi/(2Nt) * (floor(2N omega t / pi) + 1/2)."""
        k = math.floor(2 * n * omega * t / math.pi)
        return PriorInterval(math.pi / (2 * n * t) * (k + 0.5), n, t)


@dataclass(frozen=True)
class QfiReport:
    value: float
    lower_bound_thm1: float
    lower_bound_prop3: float
    n: int
    t: float
    J: float


def _zbar_moments(sp: Spectrum, states, t: float):
    """<Zbar> and <Zbar^2> for each state, Zbar the time average of Z over [0, t]."""
    n = sp.n
    z = total_z(n)
    W = sp.vectors
    z_e = (W.conj().T * z) @ W
    if t != 0:
        gap = sp.energies[:, None] - sp.energies[None, :]
        z_e = z_e * phase_average(gap * t)
    out = []
    for psi in states:
        c = W.conj().T @ psi
        zc = z_e @ c
        out.append((float(np.vdot(c, zc).real), float(np.vdot(zc, zc).real)))
    return out


def qfi(psi_in: np.ndarray, H: PerturbedHamiltonian, t: float, c_in: float = 1.0, c_prime: float | None = None) -> QfiReport:
    """F = 4 t^2 (<Zbar^2> - <Zbar>^2) on the input state."""
    n = n_qubits(psi_in)
    J = H.local_strength
    if t == 0:
        value = 0.0
    else:
        ((m1, m2),) = _zbar_moments(spectrum(H), [psi_in], t)
        value = max(0.0, 4 * t * t * (m2 - m1 * m1))
    if value > 4 * t * t * n * n * (1 + 1e-9):
        raise NumericalAssertionError(f"QFI {value} exceeds 4 t^2 N^2")
    thm1 = qfi_lower_bound_thm1(c_in, J, t, n) if J * t < c_in else float("nan")
    prop3 = qfi_lower_bound_prop3(c_prime if c_prime is not None else c_in, J, t, n)
    return QfiReport(value, thm1, prop3, n, t, J)


def qfi_finite_difference(psi_in: np.ndarray, H: PerturbedHamiltonian, t: float, step: float = 1e-5) -> float:
    """Central finite-difference oracle for the QFI of omega -> e^{-it H_omega} psi_in."""
    psi = evolve(psi_in, H, t)
    up = evolve(psi_in, H.with_omega(H.omega + step), t)
    dn = evolve(psi_in, H.with_omega(H.omega - step), t)
    d = (up - dn) / (2 * step)
    return float(4 * (np.vdot(d, d).real - abs(np.vdot(psi, d)) ** 2))


def qfi_lower_bound_thm1(c_in: float, J: float, t: float, n: int) -> float:
    """Leading term 4 t^2 N^2 (c_in - J t)^2."""
    if J > 0 and t >= c_in / J:
        raise DomainError("requires t < c_in / J")
    return 4 * t * t * n * n * (c_in - J * t) ** 2


def qfi_lower_bound_prop3(c_prime: float, J: float, t: float, n: int) -> float:
    """4 t^2 N^2 (c'_in - 4 J t); may be negative outside its useful range."""
    return 4 * t * t * n * n * (c_prime - 4 * J * t)


def precision_limits(n: int, m: int, t: float) -> dict:
    return {"sql": (m * n * t * t) ** -0.5, "hl": (4 * m * n * n * t * t) ** -0.5}


def weak_perturbation_slope_bound(c_in: float, J: float, omega: float, t: float, n: int):
    """(lower bound on c_omega, slope interval) valid when 2J < c_in omega."""
    if not 2 * J < c_in * omega:
        raise DomainError("requires 2J < c_in * omega")
    lo = c_in - 2 * J / omega
    return t * lo, (2 * lo * t * n, 2 * t * n)


def theorem_slope_interval(c_in: float, J: float, t: float, n: int) -> tuple[float, float]:
    """Slope interval of f on the prior interval: [2t(c_in - Jt)N, 2tN]."""
    return 2 * t * (c_in - J * t) * n, 2 * t * n


def prethermal_time(J: float, omega: float, c_pre: float = 1.0) -> float:
    if J <= 0:
        raise DomainError("J must be positive")
    return math.exp(c_pre * omega / J) / J


def time_average_deviation(H: PerturbedHamiltonian, t: float) -> float:
    """||Zbar - Z|| (spectral norm), with Zbar the time average of Z(s) over [0, t]."""
    sp = spectrum(H)
    z = total_z(H.n)
    zbar = sp.time_average(z, t)
    return float(np.linalg.norm(zbar - np.diag(z), 2))


# ----------------------------------------------------------------------------
# phase function


@dataclass
class PhaseFunction:
    """f(w) = int_{w'}^{w} dw'' t (<Zbar>_0 - <Zbar>_1) evaluated at field w''.

    The inner time integral is done exactly in the eigenbasis; the outer one by
    Gauss-Legendre with a node-doubling convergence check.
    """

    pair: SuperposedPair
    H: PerturbedHamiltonian
    t: float
    prior: PriorInterval
    nodes: int = 16
    rtol: float = 1e-10
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: Lock = field(default_factory=Lock, repr=False)
    _cheb: np.ndarray | None = field(default=None, repr=False)

    @property
    def omega_prime(self) -> float:
        return self.prior.omega_prime

    def slope(self, omega: float) -> float:
        """df/dw at w: t (<Zbar>_0 - <Zbar>_1) under H at field w."""
        key = float(omega)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        sp = Spectrum(self.H.with_omega(key))
        (a, _), (b, _) = _zbar_moments(sp, [self.pair.branch0, self.pair.branch1], self.t)
        val = self.t * (a - b)
        with self._lock:
            self._cache[key] = val
        return val

    def _gl(self, omega: float, nodes: int) -> float:
        x, w = leggauss(nodes)
        a, b = self.omega_prime, omega
        mid, half = (a + b) / 2, (b - a) / 2
        return half * sum(wi * self.slope(mid + half * xi) for xi, wi in zip(x, w))

    def __call__(self, omega: float) -> float:
        if omega == self.omega_prime:
            return 0.0
        if self._cheb is not None:
            return self._cheb_eval(omega)
        return self.evaluate(omega)

    def evaluate(self, omega: float) -> float:
        v1 = self._gl(omega, self.nodes)
        v2 = self._gl(omega, 2 * self.nodes)
        if abs(v1 - v2) > max(self.rtol * abs(v2), 1e-13):
            raise NumericalAssertionError(f"phase-function quadrature not converged ({v1} vs {v2})")
        tol = 1e-6
        if not -math.pi / 2 - tol <= v2 <= math.pi / 2 + tol:
            raise NumericalAssertionError(f"f = {v2} outside [-pi/2, pi/2]")
        return v2

    # fast tabulated evaluator used for repeated bisection
    def tabulate(self, degree: int = 24) -> "PhaseFunction":
        lo, hi = self.prior.lo, self.prior.hi
        k = np.arange(degree + 1)
        x = np.cos(np.pi * (k + 0.5) / (degree + 1))
        om = (lo + hi) / 2 + (hi - lo) / 2 * x
        vals = np.array([self.slope(o) for o in om])
        coef = C.chebfit(x, vals, degree)
        anti = C.chebint(coef, lbnd=(2 * self.omega_prime - lo - hi) / (hi - lo)) * (hi - lo) / 2
        self._cheb = anti
        # self-check against direct quadrature at the interval edges
        for o in (lo, hi):
            ref = self._gl(o, self.nodes)
            got = self._cheb_eval(o)
            if abs(ref - got) > 1e-9 * max(1.0, abs(ref)):
                raise NumericalAssertionError(f"tabulated phase function off by {abs(ref - got):.2e}")
        return self

    def _cheb_eval(self, omega: float) -> float:
        lo, hi = self.prior.lo, self.prior.hi
        return float(C.chebval((2 * omega - lo - hi) / (hi - lo), self._cheb))


def phase_function_eval(omega_tilde: float, pair: SuperposedPair, H: PerturbedHamiltonian, t: float,
                        prior: PriorInterval, nodes: int = 16) -> float:
    if not prior.contains(omega_tilde):
        raise DomainError(f"omega {omega_tilde} outside prior interval [{prior.lo}, {prior.hi}]")
    return PhaseFunction(pair, H, t, prior, nodes).evaluate(omega_tilde)
