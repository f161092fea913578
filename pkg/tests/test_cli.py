import csv
import io
import subprocess
import sys

import pytest

from manafpc.cli import main


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_bounds(capsys, tmp_path):
    out_csv = tmp_path / "b.csv"
    assert main(["bounds", "--n", "1000", "--k", "20", "--p-b", "0.1", "--f", "10", "--m-b", "0.2",
                 "--csv", str(out_csv)]) == 0
    rows = _rows(capsys.readouterr().out)
    assert [r["kind"] for r in rows] == ["uniform", "mana"]
    assert 0.225 <= float(rows[0]["bound"]) <= 0.240
    assert 0.119 <= float(rows[1]["bound"]) <= 0.125
    main(["bounds", "--n", "200", "--p-b", "0.1", "--f", "10", "--csv", str(out_csv)])
    assert len(_rows(out_csv.read_text())) == 3


def test_bounds_needs_kind(capsys):
    assert main(["bounds", "--n", "100", "--p-b", "0.1"]) == 2
    assert "error" in capsys.readouterr().err


def test_simulate_flags_and_manifest_replay(tmp_path, capsys):
    args = ["simulate", "--n", "50", "--q", "0.2", "--k", "10", "20", "--runs", "5", "--seed", "4",
            "--improvements", "all"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    rows = _rows(capsys.readouterr().out)
    assert [int(r["k"]) for r in rows] == [10, 20] and rows[0]["improvements"] == "7"
    assert main(["simulate", "--manifest", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b")]) == 0
    for name in ("runs.csv", "summary.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_config_with_override(tmp_path, capsys):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text("n: 40\nq: 0.1\nruns: 3\n")
    assert main(["simulate", "--config", str(cfg), "--runs", "2", "--trace", str(tmp_path / "t.csv")]) == 0
    assert _rows(capsys.readouterr().out)[0]["runs"] == "2"
    trace = _rows((tmp_path / "t.csv").read_text())
    assert trace[0]["round"] == "1" and trace[0]["threshold"] == "0.66"


def test_simulate_validation_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("n: 40\nbeta: 0.7\n")
    assert main(["simulate", "--config", str(cfg)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["simulate", "--n", "10", "--q", "0.99", "--runs", "1"]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_analyze_voting_power(capsys):
    assert main(["analyze", "voting-power", "--manas", "0.6", "0.4", "--k", "2", "--f", "square"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert float(rows[0]["voting_power"]) == pytest.approx(0.36 / 0.52)
    assert main(["analyze", "voting-power", "--manas", "0.5", "0.5", "--k", "3", "--samples", "2000"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert rows[0]["stderr"] != ""


def test_analyze_fairness(capsys):
    assert main(["analyze", "fairness-check", "--manas", "0.6", "0.4", "--k", "2", "--f", "square"]) == 0
    assert float(_rows(capsys.readouterr().out)[0]["deviation"]) > 1e-3


def test_analyze_quorum_prob(capsys):
    assert main(["analyze", "quorum-prob", "--k", "20", "40", "--p", "0.66", "--tau", "0.5"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert list(rows[0]) == ["k", "p", "tau", "exact", "chernoff_bound"]
    assert all(float(r["exact"]) <= float(r["chernoff_bound"]) for r in rows)


def test_loadstats_and_mana(capsys):
    assert main(["loadstats", "--n", "50", "--buckets", "5"]) == 0
    assert len(_rows(capsys.readouterr().out)) == 5
    assert main(["mana", "--n", "10", "--q", "0.2"]) == 0
    captured = capsys.readouterr()
    assert len(_rows(captured.out)) == 10 and "n_eff" in captured.err


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "manafpc.cli", "bounds", "--n", "1000", "--p-b", "0.1",
                           "--m-b", "0.2"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("kind,")
