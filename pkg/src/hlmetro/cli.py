"""Command-line entry points. Exit codes: 0 ok, 2 validation error, 3 numerical assertion failure."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .errors import NumericalAssertionError, ValidationError
from .harness import (BACKENDS, PROTOCOLS, ExperimentConfig, build_hamiltonian, build_pair, build_provider,
                      render_report, run_procedure2, scaling_study, write_csv, write_jsonl)
from .streams import stream


def _ints(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _model_args(p: argparse.ArgumentParser, n_default=4):
    p.add_argument("--N", type=int, default=n_default)
    p.add_argument("--J", type=float, default=0.1)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--omega", type=float, default=0.9)
    p.add_argument("--model", default="ising_chain", choices=["none", "ising_chain", "transverse_field"])


def _config_from(args) -> ExperimentConfig:
    base = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    overrides = {"seed": args.seed, "backend": args.backend, "output": args.output}
    for key in ("protocol", "M", "repeats", "t"):
        overrides[key] = getattr(args, key, None)
    if getattr(args, "allow_unsafe", False):
        overrides["allow_unsafe"] = True
    if getattr(args, "N", None):
        overrides["N"] = args.N
    if getattr(args, "J", None) is not None or getattr(args, "model", None):
        ham = dict(base.hamiltonian)
        if args.model:
            ham["model"] = args.model
        if args.J is not None:
            ham["J"] = args.J
        overrides["hamiltonian"] = ham
    if getattr(args, "omega", None) is not None:
        overrides["omega_true"] = args.omega
    return base.replace(**overrides)


def cmd_run(args) -> int:
    cfg = _config_from(args)
    if cfg.output is None:
        cfg = cfg.replace(output="results/run.jsonl")
    result = run_procedure2(cfg)
    for rec in result.records():
        print(json.dumps(rec))
    return 0


def cmd_scale(args) -> int:
    cfg = _config_from(args)
    result, fit = scaling_study(cfg.replace(output=None))
    out = Path(args.output or "results/scale.csv")
    if out.suffix == ".jsonl":
        write_jsonl(result, out)
        csv_path = out.with_suffix(".csv")
    else:
        csv_path = out
    write_csv(result, csv_path, fit)
    if args.report:
        render_report(result, args.report, fit)
    print(csv_path.read_text(), end="")
    print(f"# exponent {fit.exponent:.4f} CI [{fit.ci_low:.4f}, {fit.ci_high:.4f}] r2 {fit.r2:.4f}")
    return 0


def cmd_qfi(args) -> int:
    from .metrology import qfi
    H = build_hamiltonian({"model": args.model, "J": args.J}, args.N, args.omega)
    rep = qfi(build_pair("ghz", args.N).combined(), H, args.t)
    print(json.dumps({"N": args.N, "t": args.t, "J_local": rep.J, "qfi": rep.value, "heisenberg": 4 * args.t**2 * args.N**2,
                      "lower_bound_thm1": rep.lower_bound_thm1, "lower_bound_prop3": rep.lower_bound_prop3}))
    return 0


def _provider(args):
    from .metrology import PriorInterval
    cfg = ExperimentConfig(hamiltonian={"model": args.model, "J": args.J}, backend=args.backend, N=(args.N,),
                           t=args.t, omega_true=args.omega, allow_unsafe=getattr(args, "allow_unsafe", False))
    H = build_hamiltonian(cfg.hamiltonian, args.N, args.omega)
    pair = build_pair("ghz", args.N)
    prior = PriorInterval.around(args.omega, args.N, args.t)
    return cfg, H, pair, prior, build_provider(cfg, pair, H, prior)


def cmd_sample(args) -> int:
    from .exact_engine import evolve
    from .locc import adaptive_measure
    _, H, pair, _, provider = _provider(args)
    psi = evolve(pair.combined(), H, args.t)
    for i in range(args.count):
        rec = adaptive_measure(psi, provider, stream(args.seed, args.N, i))
        print("".join(str(b) for b in rec.outcomes))
    return 0


def cmd_verify_basis(args) -> int:
    from .exact_engine import evolve
    from .locc import verify_basis_condition
    _, H, pair, prior, provider = _provider(args)
    Hp = H.with_omega(prior.omega_prime)
    phi0, phi1 = evolve(pair.branch0, Hp, args.t), evolve(pair.branch1, Hp, args.t)
    res = verify_basis_condition(provider, (phi0, phi1))
    print(json.dumps({"N": args.N, "backend": args.backend, "max_residual": res}))
    return 0


def cmd_baseline_a(args) -> int:
    from .baselines import naive_distribution
    d = naive_distribution(args.N, args.omega, args.J, args.t)
    print(json.dumps({"N": args.N, "eta0": d.params.eta0, "f_eta": d.params.f_eta, "l1_distance": d.l1_distance(),
                      "coherence_l1": d.coherence_l1(), "bound": d.bound(), "recurrent": d.recurrent}))
    return 0


def cmd_baseline_b(args) -> int:
    from .baselines import undo_protocol_expectation, undo_protocol_slope, undo_slope_bound
    from .metrology import PriorInterval
    H = build_hamiltonian({"model": args.model, "J": args.J}, args.N, args.omega)
    prior = PriorInterval.around(args.omega, args.N, args.t)
    val = undo_protocol_expectation(H, args.omega, prior.omega_prime, args.t)
    slope = undo_protocol_slope(H, args.omega, prior.omega_prime, args.t)
    J = H.local_strength
    print(json.dumps({"N": args.N, "expectation": val, "ideal": math.cos(2 * args.N * args.omega * args.t),
                      "deviation_bound": math.pi * J * args.t / 2, "slope": slope,
                      "slope_bound": undo_slope_bound(args.N, args.omega, J, args.t)}))
    return 0


def cmd_dump_phase_fn(args) -> int:
    from .metrology import PhaseFunction, PriorInterval
    H = build_hamiltonian({"model": args.model, "J": args.J}, args.N, args.omega)
    prior = PriorInterval.around(args.omega, args.N, args.t)
    f = PhaseFunction(build_pair("ghz", args.N), H, args.t, prior)
    lines = ["omega,f"]
    for om in np.linspace(prior.lo, prior.hi, args.points):
        lines.append(f"{om:.12g},{f.evaluate(om):.12g}")
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hlmetro", description="Heisenberg-limited metrology workbench")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, fn in (("run", cmd_run), ("scale", cmd_scale)):
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--backend", choices=BACKENDS)
        p.add_argument("--protocol", choices=PROTOCOLS)
        p.add_argument("--output")
        p.add_argument("--N", type=_ints)
        p.add_argument("--J", type=float)
        p.add_argument("--model", choices=["none", "ising_chain", "transverse_field"])
        p.add_argument("--omega", type=float)
        p.add_argument("--t", type=float)
        p.add_argument("--M", type=int)
        p.add_argument("--repeats", type=int)
        p.add_argument("--allow-unsafe", action="store_true", help="run the cluster series beyond t_star")
        if name == "scale":
            p.add_argument("--report", help="PNG path for the delta-omega plot")
        p.set_defaults(fn=fn)

    p = sub.add_parser("qfi")
    _model_args(p)
    p.set_defaults(fn=cmd_qfi)

    for name, fn in (("sample", cmd_sample), ("verify-basis", cmd_verify_basis)):
        p = sub.add_parser(name)
        _model_args(p)
        p.add_argument("--backend", choices=BACKENDS, default="exact")
        p.add_argument("--allow-unsafe", action="store_true")
        if name == "sample":
            p.add_argument("--count", type=int, default=10)
            p.add_argument("--seed", type=int, default=0)
        p.set_defaults(fn=fn)

    p = sub.add_parser("baseline-a")
    _model_args(p, n_default=10)
    p.set_defaults(fn=cmd_baseline_a)

    p = sub.add_parser("baseline-b")
    _model_args(p)
    p.set_defaults(fn=cmd_baseline_b)

    p = sub.add_parser("dump-phase-fn")
    _model_args(p)
    p.add_argument("--points", type=int, default=21)
    p.add_argument("--output")
    p.set_defaults(fn=cmd_dump_phase_fn)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalAssertionError as e:
        print(f"numerical assertion failed: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
