import json

import numpy as np
import pytest

from hlmetro.errors import ValidationError
from hlmetro.harness import (ExperimentConfig, fit_exponent, render_report, run_procedure2, scaling_study,
                             thread_count, write_csv, write_jsonl)
from hlmetro.streams import stream


def _cfg(**kw):
    base = dict(hamiltonian={"model": "ising_chain", "J": 0.1}, N=(4,), M=2000, repeats=10, seed=5)
    base.update(kw)
    return ExperimentConfig(**base)


def test_streams_are_keyed():
    a = stream(1, 4, 0).random(3)
    assert np.array_equal(a, stream(1, 4, 0).random(3))
    assert not np.array_equal(a, stream(1, 4, 1).random(3))
    assert not np.array_equal(a, stream(2, 4, 0).random(3))


def test_config_validation(tmp_path):
    with pytest.raises(ValidationError):
        _cfg(backend="gpu")
    with pytest.raises(ValidationError):
        _cfg(omega_prime=2.0)
    with pytest.raises(ValidationError):
        _cfg(backend="mps", hamiltonian={"model": "random_local", "J": 0.1, "graph": "ring"})
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict({"bogus": 1})
    p = tmp_path / "c.yaml"
    p.write_text("N: [4, 6]\nt: 1.0\nomega_true: 0.9\nhamiltonian: {model: ising_chain, J: 0.05}\n")
    cfg = ExperimentConfig.load(p)
    assert cfg.N == (4, 6)
    assert cfg.config_hash() == ExperimentConfig.load(p).config_hash()


def test_run_is_reproducible_and_sane():
    cfg = _cfg()
    a = run_procedure2(cfg)
    b = run_procedure2(cfg)
    assert a == b
    row = a.rows[0]
    assert abs(row.omega_est - 0.9) < 5 * row.delta_omega_empirical + 1e-12
    assert row.delta_omega_empirical < 5 * row.hl_reference


def test_single_trial_edge_case():
    res = run_procedure2(_cfg(M=1, repeats=3))
    assert np.isfinite(res.rows[0].delta_omega_empirical)


def test_thread_count_does_not_change_results(monkeypatch):
    cfg = _cfg(repeats=6)
    monkeypatch.setenv("HLMETRO_THREADS", "1")
    a = run_procedure2(cfg)
    monkeypatch.setenv("HLMETRO_THREADS", "3")
    assert thread_count() == 3
    b = run_procedure2(cfg)
    assert a == b
    monkeypatch.setenv("HLMETRO_THREADS", "zero")
    with pytest.raises(ValidationError):
        thread_count()


def test_outputs(tmp_path):
    cfg = _cfg(N=(2, 3, 4), repeats=5, hamiltonian={"model": "none"}, protocol="ideal")
    result, fit = scaling_study(cfg)
    jl = write_jsonl(result, tmp_path / "r.jsonl")
    recs = [json.loads(x) for x in jl.read_text().splitlines()]
    assert len(recs) == 3
    assert all(r["config_hash"] == cfg.config_hash() and r["version"] for r in recs)
    cp = write_csv(result, tmp_path / "r.csv", fit)
    assert cp.read_text().splitlines()[0].startswith("N,P_hat,P_prime")
    assert (tmp_path / "r.fit.json").exists()
    png = render_report(result, tmp_path / "r.png", fit)
    assert png.stat().st_size > 0


def test_fit_exponent_recovers_power_law():
    ns = np.array([2, 4, 8, 16])
    fit = fit_exponent(ns, 3.0 * ns**-1.0)
    assert fit.exponent == pytest.approx(-1.0)
    with pytest.raises(ValidationError):
        fit_exponent([2, 4], [1, 0.5])


def test_naive_protocol_requires_on_site_field():
    with pytest.raises(ValidationError):
        _cfg(protocol="naive")
