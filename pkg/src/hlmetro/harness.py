"""Experiment orchestration: configs, seeded campaigns, scaling fits and result files."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy import stats

from . import __version__
from .baselines import naive_campaign
from .errors import ValidationError
from .exact_engine import evolve
from .initial_states import SuperposedPair, make_ghz, make_rotated_ghz
from .locc import (BasisProvider, ExactBasisProvider, adaptive_measure, estimate_omega, outcome_distribution,
                   parity_expectation, string_parities)
from .metrology import PhaseFunction, PriorInterval, precision_limits
from .pauli_graph import PerturbedHamiltonian, build_graph, ising_chain, random_local_hamiltonian, transverse_field
from .streams import stream

log = logging.getLogger(__name__)

BACKENDS = ("exact", "mps", "cluster")
PROTOCOLS = ("locc", "ideal", "naive")
MODELS = ("none", "ising_chain", "transverse_field", "random_local")
THREADS_ENV = "HLMETRO_THREADS"
# classical <P>' is enumerated exactly up to this size for the exact backend
EXACT_PRIME_CAP = 8
# outcome laws are enumerated up to this size; sequential sampling above
ENUMERATE_CAP = 12


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValidationError(f"{THREADS_ENV} must be positive")
    return n


@dataclass(frozen=True)
class ExperimentConfig:
    hamiltonian: dict = field(default_factory=lambda: {"model": "ising_chain", "J": 0.1})
    initial_state: dict | str = "ghz"
    backend: str = "exact"
    protocol: str = "locc"
    N: tuple = (4, 6, 8)
    t: float = 1.0
    omega_true: float = 0.9
    omega_prime: float | None = None
    M: int = 10_000
    repeats: int = 200
    seed: int = 0
    output: str | None = None
    bisection_tol: float = 1e-9
    phase_nodes: int = 16
    cheb_degree: int = 24
    prime_samples: int | None = None
    series_order: int = 8
    allow_unsafe: bool = False
    naive_window: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "N", tuple(int(n) for n in self.N))
        if self.backend not in BACKENDS:
            raise ValidationError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.protocol not in PROTOCOLS:
            raise ValidationError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if not self.N or min(self.N) < 1:
            raise ValidationError("N list must contain positive sizes")
        if self.t <= 0:
            raise ValidationError("t must be positive")
        if self.M < 1 or self.repeats < 1:
            raise ValidationError("M and repeats must be at least 1")
        if not 0 < self.bisection_tol < 1:
            raise ValidationError("bisection_tol is relative to the prior half-width and must lie in (0, 1)")
        model = self.hamiltonian.get("model")
        if model not in MODELS:
            raise ValidationError(f"hamiltonian model must be one of {MODELS}, got {model!r}")
        extra = set(self.hamiltonian) - {"model", "J", "axis", "graph", "seed"}
        if extra:
            raise ValidationError(f"unknown hamiltonian keys: {sorted(extra)}")
        if self.protocol == "naive" and model not in ("transverse_field", "none"):
            raise ValidationError("the naive protocol is defined for V = J sum X only")
        if self.backend in ("mps", "cluster") and self.initial_state != "ghz":
            raise ValidationError(f"the {self.backend} backend supports the GHZ input only")
        if self.backend == "mps" and self.hamiltonian.get("graph", "chain") != "chain":
            raise ValidationError("the mps backend requires a chain interaction graph")
        if self.protocol != "naive":
            for n in self.N:
                prior = self.prior(n)
                if not prior.contains(self.omega_true):
                    raise ValidationError(f"omega_true {self.omega_true} outside prior interval "
                                          f"[{prior.lo:.6g}, {prior.hi:.6g}] at N={n}")

    def prior(self, n: int) -> PriorInterval:
        if self.omega_prime is None:
            return PriorInterval.around(self.omega_true, n, self.t)
        return PriorInterval(float(self.omega_prime), n, self.t)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["N"] = list(self.N)
        return d

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **{k: v for k, v in kw.items() if v is not None})

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ValidationError("config must be a mapping")
        names = {f.name for f in dataclasses.fields(ExperimentConfig)}
        extra = set(d) - names
        if extra:
            raise ValidationError(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        if "N" in d:
            n = d["N"]
            d["N"] = tuple(n) if isinstance(n, (list, tuple)) else (int(n),)
        try:
            return ExperimentConfig(**d)
        except TypeError as e:
            raise ValidationError(str(e)) from None

    @staticmethod
    def load(path: str | os.PathLike) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ValidationError(f"cannot parse {path}: {e}") from None
        return ExperimentConfig.from_dict(raw or {})


def build_hamiltonian(spec: dict, n: int, omega: float) -> PerturbedHamiltonian:
    model = spec.get("model")
    J = float(spec.get("J", 0.0))
    if model == "none" or J == 0:
        return PerturbedHamiltonian(build_graph("chain", n), (), float(omega))
    if model == "ising_chain":
        return ising_chain(n, J, omega, spec.get("axis", "XX"))
    if model == "transverse_field":
        return transverse_field(n, J, omega, spec.get("axis", "X"))
    if model == "random_local":
        graph = build_graph(spec.get("graph", "chain"), n)
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        return random_local_hamiltonian(graph, J, omega, rng)
    raise ValidationError(f"unknown model {model!r}")


def build_pair(spec, n: int) -> SuperposedPair:
    if spec == "ghz":
        return make_ghz(n)
    if isinstance(spec, dict) and set(spec) == {"rotated"}:
        a, b = spec["rotated"]
        return make_rotated_ghz(n, complex(a), complex(b))
    raise ValidationError(f"unknown initial state {spec!r}")


def build_provider(config: ExperimentConfig, pair: SuperposedPair, H: PerturbedHamiltonian,
                   prior: PriorInterval) -> BasisProvider:
    if config.backend == "exact":
        return ExactBasisProvider.from_hamiltonian(pair, H, config.t, prior.omega_prime)
    if config.backend == "mps":
        from .mps_backend import MpsBasisProvider
        return MpsBasisProvider.from_hamiltonian(H, config.t, prior.omega_prime)
    from .cluster_sampler import ClusterBasisProvider
    return ClusterBasisProvider(H, config.t, prior.omega_prime, series_order=config.series_order,
                                allow_unsafe=config.allow_unsafe)


# ----------------------------------------------------------------------------
# campaigns


@dataclass
class CampaignRow:
    N: int
    P_hat: float
    P_prime: float
    omega_true: float
    omega_est: float
    delta_omega_empirical: float
    hl_reference: float
    sql_reference: float
    wall_time: float
    seed: int
    trials: int
    M: int
    backend: str
    protocol: str
    bias: float = 0.0
    clamped: int = 0


ROW_FIELDS = tuple(f.name for f in dataclasses.fields(CampaignRow))


@dataclass
class CampaignResult:
    config: ExperimentConfig
    rows: list[CampaignRow]
    estimates: dict = field(default_factory=dict, repr=False)

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    def records(self) -> list[dict]:
        out = []
        for r in self.rows:
            d = {k: getattr(r, k) for k in ROW_FIELDS}
            d["config_hash"] = self.config_hash
            d["version"] = __version__
            out.append(d)
        return out

    def __eq__(self, other):
        if not isinstance(other, CampaignResult):
            return NotImplemented
        strip = lambda rs: [{k: v for k, v in r.items() if k != "wall_time"} for r in rs]  # noqa: E731
        return strip(self.records()) == strip(other.records())


class _StringLaw:
    """Draws parity averages from an outcome law, enumerated or sequential."""

    def __init__(self, n: int, probs: np.ndarray | None = None, draw=None):
        self.n = n
        self.probs = None
        self.parities = None
        if probs is not None:
            p = np.clip(np.asarray(probs, dtype=float), 0, None)
            self.probs = p / p.sum()
            self.parities = string_parities(n)
        self._draw = draw

    def parity_mean(self, m: int, rng: np.random.Generator) -> float:
        if self.probs is not None:
            counts = rng.multinomial(m, self.probs)
            return float(np.dot(counts, self.parities) / m)
        return float(np.mean([self._draw(rng).parity for _ in range(m)]))


def _experiment_law(psi: np.ndarray, provider: BasisProvider) -> _StringLaw:
    n = provider.n
    if n <= ENUMERATE_CAP:
        return _StringLaw(n, outcome_distribution(provider, psi))
    return _StringLaw(n, draw=lambda rng: adaptive_measure(psi, provider, rng))


def _prime_value(config: ExperimentConfig, provider: BasisProvider, H: PerturbedHamiltonian,
                 prior: PriorInterval, pair: SuperposedPair, seed_key: int) -> float:
    """Classical <P>' on the ideal branch pair at omega'.

    Exact backend, small N: enumerated. Otherwise sampled from branch 0, using
    <E_x|phi1> = (-1)^{|x|} i <E_x|phi0> so the parity law of the ideal state
    equals that of phi0 alone.
    """
    n = H.n
    if config.backend == "exact" and n <= EXACT_PRIME_CAP:
        return parity_expectation(provider, (provider.phi0 + provider.phi1) / math.sqrt(2))
    k = config.prime_samples or max(n, config.M)
    if k < n:
        raise ValidationError(f"prime_samples must be at least N = {n}")
    rng = stream(config.seed, n, seed_key)
    if config.backend == "exact":
        law = _experiment_law(provider.phi0, provider)
    elif config.backend == "mps":
        from .mps_backend import mps_outcome_distribution, sample_mps
        phi0 = provider.root[0]
        if n <= ENUMERATE_CAP:
            law = _StringLaw(n, mps_outcome_distribution(phi0, provider))
        else:
            law = _StringLaw(n, draw=lambda g: sample_mps(phi0, provider, g))
    else:
        from .cluster_sampler import ClusterSampler
        sampler = ClusterSampler(H.with_omega(prior.omega_prime), config.t, provider,
                                 c_m=0.5, order=config.series_order, allow_unsafe=config.allow_unsafe)
        if n <= ENUMERATE_CAP:
            law = _StringLaw(n, sampler.distribution())
        else:
            law = _StringLaw(n, draw=sampler.draw)
    return law.parity_mean(k, rng)


def _map(fn, items):
    workers = thread_count()
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _run_locc(config: ExperimentConfig, n: int) -> tuple[CampaignRow, np.ndarray]:
    t0 = time.perf_counter()
    H = build_hamiltonian(config.hamiltonian if config.protocol == "locc" else {"model": "none"}, n,
                          config.omega_true)
    pair = build_pair(config.initial_state, n)
    prior = config.prior(n)
    provider = build_provider(config, pair, H, prior)
    psi = evolve(pair.combined(), H, config.t)
    law = _experiment_law(psi, provider)
    P_prime = _prime_value(config, provider, H, prior, pair, config.repeats)
    f = PhaseFunction(pair, H, config.t, prior, config.phase_nodes).tabulate(config.cheb_degree)
    tol = config.bisection_tol * prior.half_width

    def trial(r):
        P_hat = law.parity_mean(config.M, stream(config.seed, n, r))
        res = estimate_omega(P_hat, P_prime, f, prior, tol)
        return P_hat, res.omega, res.clamped

    out = _map(trial, range(config.repeats))
    P = np.array([o[0] for o in out])
    est = np.array([o[1] for o in out])
    err = est - config.omega_true
    lim = precision_limits(n, config.M, config.t)
    row = CampaignRow(n, float(P.mean()), float(P_prime), config.omega_true, float(est.mean()),
                      float(np.sqrt(np.mean(err**2))), lim["hl"], lim["sql"], time.perf_counter() - t0,
                      config.seed, config.repeats, config.M, config.backend, config.protocol,
                      float(err.mean()), int(sum(o[2] for o in out)))
    return row, est


def _run_naive(config: ExperimentConfig, n: int) -> tuple[CampaignRow, np.ndarray]:
    t0 = time.perf_counter()
    J = float(config.hamiltonian.get("J", 0.0))
    res = naive_campaign(n, config.omega_true, J, config.t, config.M, config.repeats, config.seed,
                         config.naive_window)
    lim = precision_limits(n, config.M, config.t)
    row = CampaignRow(n, float("nan"), float("nan"), config.omega_true, config.omega_true + res["bias"],
                      res["delta_omega"], lim["hl"], lim["sql"], time.perf_counter() - t0, config.seed,
                      config.repeats, config.M, "analytic", "naive", res["bias"], 0)
    return row, np.array([])


def run_procedure2(config: ExperimentConfig) -> CampaignResult:
    """Prepare, evolve, measure adaptively M times, average parities, read out omega; per N."""
    rows, ests = [], {}
    for n in config.N:
        try:
            row, est = (_run_naive if config.protocol == "naive" else _run_locc)(config, n)
        except Exception as e:
            e.args = (f"N={n}: {e.args[0] if e.args else e}",) + tuple(e.args[1:])
            raise
        log.info("N=%d dw=%.3e (HL %.3e) in %.1fs", n, row.delta_omega_empirical, row.hl_reference, row.wall_time)
        rows.append(row)
        ests[n] = est
    result = CampaignResult(config, rows, ests)
    if config.output:
        write_jsonl(result, config.output)
    return result


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    ci_low: float
    ci_high: float
    intercept: float
    r2: float


def fit_exponent(ns, deltas, level: float = 0.95) -> ScalingFit:
    """Least-squares slope of log(delta) against log(N) with a Student-t interval."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(deltas, dtype=float))
    if len(set(x)) < 3:
        raise ValidationError("scaling fit needs at least three distinct N")
    lr = stats.linregress(x, y)
    q = stats.t.ppf(0.5 + level / 2, len(x) - 2)
    return ScalingFit(float(lr.slope), float(lr.slope - q * lr.stderr), float(lr.slope + q * lr.stderr),
                      float(lr.intercept), float(lr.rvalue**2))


def scaling_study(config: ExperimentConfig) -> tuple[CampaignResult, ScalingFit]:
    if len(set(config.N)) < 3:
        raise ValidationError("scaling study needs at least three distinct N")
    result = run_procedure2(config)
    fit = fit_exponent([r.N for r in result.rows], [r.delta_omega_empirical for r in result.rows])
    return result, fit


# ----------------------------------------------------------------------------
# persistence


def write_jsonl(result: CampaignResult, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in result.records():
            fh.write(json.dumps(rec) + "\n")
    return path


def write_csv(result: CampaignResult, path: str | os.PathLike, fit: ScalingFit | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(ROW_FIELDS) + ["config_hash", "version"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for rec in result.records():
            w.writerow(rec)
    if fit is not None:
        with open(path.with_suffix(".fit.json"), "w") as fh:
            json.dump({**dataclasses.asdict(fit), "config_hash": result.config_hash, "version": __version__},
                      fh, indent=1)
    return path


def render_report(result: CampaignResult, path: str | os.PathLike, fit: ScalingFit | None = None) -> Path:
    """delta omega against N on log axes, with the HL and SQL references."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ns = np.array([r.N for r in result.rows])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(ns, [r.delta_omega_empirical for r in result.rows], "o-", label="empirical")
    ax.loglog(ns, [r.hl_reference for r in result.rows], "k--", label="HL")
    ax.loglog(ns, [r.sql_reference for r in result.rows], "k:", label="SQL")
    title = f"{result.config.protocol} / {result.config.backend}"
    if fit is not None:
        title += f": slope {fit.exponent:.2f} [{fit.ci_low:.2f}, {fit.ci_high:.2f}]"
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("N")
    ax.set_ylabel(r"$\delta\omega$")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
