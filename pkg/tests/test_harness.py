import csv
import io
import json
import math

import pytest

from manafpc import harness
from manafpc.harness import ConfigError, ExperimentSpec, derive_seed, parse_config, run_experiment
from manafpc.protocol import ProtocolConfig


def _small(**overrides):
    text = "n: 60\nq: 0.2\nruns: 40\nseed: 3\n" + "".join(f"{k}: {v}\n" for k, v in overrides.items())
    return parse_config(text)


def test_empty_document_gives_defaults():
    spec = parse_config("")
    assert spec.n == (1000,) and spec.s == (0.0,) and spec.q == (0.25,) and spec.k == (20,)
    b = spec.base
    assert (b.p0, b.tau, b.beta, b.l, b.max_it, b.alpha) == (0.66, 0.66, 0.3, 10, 50, 0.01)
    assert b.improvements == frozenset()
    assert spec.strategy.kind == "mana_ivs" and not spec.detection.enabled


def test_strongest_configuration():
    spec = parse_config("q: 0.25\ns: 2\nimprovements: all\n")
    assert spec.s == (2.0,) and spec.q == (0.25,)
    assert spec.base.improvements_mask == 7


def test_beta_range_message():
    with pytest.raises(ConfigError, match=r"line 2: beta must lie in \[0, 0.5\]"):
        parse_config("n: 100\nbeta: 0.7\n")


@pytest.mark.parametrize("text, pattern", [
    ("foo: 1\n", "line 1: unknown key 'foo'"),
    ("n: 100\nk: [10, x]\n", "line 2: 'k' must be a number"),
    ("a: [1\n", "line 2, column 1: malformed"),
    ("n: 10\nq: 0.99\n", "line 2: q"),
    ("runs: 0\n", "line 1: runs must be >= 1"),
    ("strategy: sybil\n", "line 1: strategy"),
    ("improvements: warp\n", "line 1: improvements"),
    ("- 1\n- 2\n", "mapping"),
])
def test_config_errors(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_config(text)


def test_grid_lists_and_json():
    spec = parse_config('{"n": [50, 100], "k": [10, 20], "p_b": 0.1, "strategy": "berserk"}')
    assert spec.grid() == [(50, 0.0, 0.25, 10), (50, 0.0, 0.25, 20), (100, 0.0, 0.25, 10), (100, 0.0, 0.25, 20)]
    assert spec.detection.enabled and spec.strategy.kind == "berserk_split"


def test_no_adversary_never_fails():
    spec = parse_config("n: 100\nq: 0\nruns: 1000\n")
    row = run_experiment(spec).rows[0]
    assert row["failures"] == 0 and row["failure_rate"] == 0
    assert row["ci_low"] == 0 and row["ci_high"] == pytest.approx(0.0038, abs=2e-4)


def test_counts_match_run_rows():
    spec = _small(k="[10, 20]")
    summary = run_experiment(spec)
    for row in summary.rows:
        runs = [r for r in summary.runs if r["k"] == row["k"]]
        assert len(runs) == row["runs"] == 40
        assert sum(r["failure_mana_mode"] for r in runs) == row["failures"]
        assert row["ci_low"] <= row["failure_rate"] <= row["ci_high"]
        assert 0 <= row["ci_low"] and row["ci_high"] <= 1


def test_deterministic_outputs(tmp_path):
    spec = _small(improvements="all")
    run_experiment(spec, tmp_path / "a")
    run_experiment(spec, tmp_path / "b", workers=2)
    for name in ("runs.csv", "summary.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_grid_point_in_isolation():
    full = run_experiment(_small(k="[10, 20]", q="[0.1, 0.2]"))
    alone = run_experiment(_small(k=20, q=0.2))
    assert alone.rows[0] == full.row(k=20, q=0.2)


def test_seed_injective():
    seeds = {derive_seed(0, n, s, q, k, r) for n in (100, 1000) for s in (0, 1) for q in (0.1, 0.25)
             for k in (10, 20) for r in range(200)}
    assert len(seeds) == 2 * 2 * 2 * 2 * 200
    assert derive_seed(1, 100, 0, 0.1, 10, 0) != derive_seed(0, 100, 0, 0.1, 10, 0)
    assert all(0 <= s < 2**64 for s in seeds)


def test_invalid_grid_aborts_before_running(monkeypatch):
    spec = ExperimentSpec(n=(100, 10), q=(0.95,), runs=5)
    calls = []
    monkeypatch.setattr(harness, "_run_one", lambda task: calls.append(task))
    with pytest.raises(ValueError):
        run_experiment(spec)
    assert calls == []


def test_io_error_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match=str(blocker)):
        run_experiment(_small(runs=2), blocker / "out")


@pytest.mark.parametrize("x, n", [(0, 1000), (3, 100), (50, 100), (100, 100)])
def test_wilson_closed_form(x, n):
    z = 1.959963984540054
    p = x / n
    center = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z / (1 + z * z / n) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    lo, hi = harness.wilson_interval(x, n)
    assert lo == pytest.approx(max(0, center - half), abs=1e-12)
    assert hi == pytest.approx(min(1, center + half), abs=1e-12)


def test_manifest_roundtrip(tmp_path):
    spec = parse_config("n: [40, 60]\ns: 1\nq: 0.1\nk: [10]\np_b: 0.2\nstrategy: berserk\n"
                        "improvements: fixed_tail_threshold\nruns: 3\nseed: 9\ndraw_cap: 100\n")
    run_experiment(spec, tmp_path)
    assert harness.load_manifest(tmp_path / "manifest.json") == spec
    data = json.loads((tmp_path / "manifest.json").read_text())
    assert data["config"]["seed"] == 9 and data["stream_labels"]["sampling"] == 1


def test_manifest_rejects_other_json(tmp_path):
    path = tmp_path / "m.json"
    path.write_text("{}")
    with pytest.raises(ConfigError):
        harness.load_manifest(path)


def test_run_csv_columns(tmp_path):
    run_experiment(_small(runs=5), tmp_path)
    rows = list(csv.DictReader(io.StringIO((tmp_path / "runs.csv").read_text())))
    assert list(rows[0]) == harness.RUN_COLUMNS and len(rows) == 5
    summary = list(csv.DictReader(io.StringIO((tmp_path / "summary.csv").read_text())))
    assert list(summary[0]) == harness.SUMMARY_COLUMNS


def test_to_config_parses_back():
    spec = ExperimentSpec(base=ProtocolConfig(improvements="all", agreement_mode="node_count"), n=(100,), runs=7)
    assert harness.spec_from_mapping(spec.to_config()) == spec


def test_presets_parse():
    from pathlib import Path

    presets = sorted((Path(__file__).parent.parent / "presets").glob("*.yaml"))
    assert presets
    for path in presets:
        parse_config(path.read_text())
