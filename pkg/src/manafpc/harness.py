"""Experiment orchestration: config parsing, seeded replicate runs, CSV output."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .adversary import AdversaryStrategy
from .mana import ManaDistribution, build_network
from .protocol import IMPROVEMENTS, DetectionConfig, ProtocolConfig, parse_improvements, run_instance
from .sampling import STREAM_LABELS

log = logging.getLogger(__name__)

DEFAULTS = {
    "n": 1000,
    "p0": 0.66,
    "tau": 0.66,
    "beta": 0.3,
    "k": 20,
    "l": 10,
    "max_it": 50,
    "q": 0.25,
    "alpha": 0.01,
    "s": 0.0,
    "l2": 5,
    "tau_final": 0.5,
    "p_b": 0.0,
    "strategy": "mana_ivs",
    "drop_p": 0.5,
    "improvements": "none",
    "agreement_mode": "mana",
    "draw_cap": None,
    "zipf_over": "honest",
    "runs": 1000,
    "seed": 0,
}
GRID_KEYS = ("n", "s", "q", "k")

RUN_COLUMNS = [
    "run_id", "seed", "n", "s", "q", "k", "strategy", "improvements", "rounds_used",
    "all_finalized", "minority_mana", "minority_nodes", "failure_mana_mode",
    "failure_node_mode", "detections",
]
SUMMARY_COLUMNS = [
    "n", "s", "q", "k", "strategy", "improvements", "p_b", "runs", "failures", "failure_rate",
    "ci_low", "ci_high", "failures_mana_mode", "failures_node_mode", "mean_rounds",
    "non_finalized", "detected_runs", "detection_rate", "mean_first_detection_round",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    base: ProtocolConfig = field(default_factory=ProtocolConfig)
    n: tuple = (1000,)
    s: tuple = (0.0,)
    q: tuple = (0.25,)
    k: tuple = (20,)
    strategy: AdversaryStrategy = field(default_factory=AdversaryStrategy)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    runs: int = 1000
    seed: int = 0
    zipf_over: str = "honest"

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError(f"runs must be >= 1, got {self.runs}")
        for key in GRID_KEYS:
            if len(getattr(self, key)) == 0:
                raise ConfigError(f"grid for {key!r} is empty")

    def grid(self):
        """Grid points as ``(n, s, q, k)`` tuples in row-major order."""
        return list(itertools.product(self.n, self.s, self.q, self.k))

    def to_config(self) -> dict:
        """Config document that parses back to this spec."""
        b = self.base
        return {
            "n": list(self.n), "s": list(self.s), "q": list(self.q), "k": list(self.k),
            "p0": b.p0, "tau": b.tau, "beta": b.beta, "l": b.l, "l2": b.l2, "max_it": b.max_it,
            "alpha": b.alpha, "tau_final": b.tau_final,
            "improvements": sorted(b.improvements), "agreement_mode": b.agreement_mode,
            "draw_cap": b.draw_cap, "p_b": self.detection.p_b,
            "strategy": self.strategy.kind, "drop_p": self.strategy.drop_p,
            "zipf_over": self.zipf_over, "runs": self.runs, "seed": self.seed,
        }


def key_lines(text: str) -> dict:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value}


def _as_tuple(key, value, cast, where=""):
    values = value if isinstance(value, (list, tuple)) else [value]
    try:
        return tuple(cast(v) for v in values)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}{key!r} must be a number or list of numbers, got {value!r}") from None


def spec_from_mapping(data: dict, lines: dict | None = None) -> ExperimentSpec:
    lines = lines or {}

    def where(key):
        return f"line {lines[key]}: " if key in lines else ""

    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        key = unknown[0]
        raise ConfigError(f"{where(key)}unknown key {key!r}; allowed keys: {', '.join(DEFAULTS)}")
    merged = {**DEFAULTS, **data}

    def checked(key, build):
        try:
            return build()
        except ConfigError as exc:
            if str(exc).startswith("line"):
                raise
            raise ConfigError(f"{where(key)}{exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where(key)}{key}: {exc}") from None

    try:
        improvements = parse_improvements(merged["improvements"])
    except ValueError as exc:
        raise ConfigError(f"{where('improvements')}improvements: {exc}") from None

    grid = {
        "n": _as_tuple("n", merged["n"], int, where("n")),
        "s": _as_tuple("s", merged["s"], float, where("s")),
        "q": _as_tuple("q", merged["q"], float, where("q")),
        "k": _as_tuple("k", merged["k"], int, where("k")),
    }
    scalar = {key: merged[key] for key in ("p0", "tau", "beta", "l", "l2", "max_it", "alpha", "tau_final")}
    try:
        base = ProtocolConfig(k=grid["k"][0], improvements=improvements,
                              agreement_mode=merged["agreement_mode"],
                              draw_cap=merged["draw_cap"], **scalar)
    except (TypeError, ValueError) as exc:
        # messages lead with the offending parameter name
        words = str(exc).replace(",", " ").split()
        key = next((w for w in words if w in DEFAULTS), "")
        raise ConfigError(f"{where(key)}{exc}") from None
    for k_value in grid["k"]:
        checked("k", lambda: replace(base, k=k_value))
    strategy = checked("strategy", lambda: AdversaryStrategy(merged["strategy"], float(merged["drop_p"])))
    p_b = checked("p_b", lambda: DetectionConfig(enabled=float(merged["p_b"]) > 0, p_b=float(merged["p_b"])))
    spec = checked("runs", lambda: ExperimentSpec(
        base=base, strategy=strategy, detection=p_b, runs=int(merged["runs"]),
        seed=int(merged["seed"]), zipf_over=str(merged["zipf_over"]), **grid))
    for n, s, q, _k in spec.grid():
        checked("q", lambda: build_network(n, s, q, spec.zipf_over))
    return spec


def parse_config(text: str) -> ExperimentSpec:
    """Parse a YAML (or JSON) experiment document; omitted keys take the defaults."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        at = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise ConfigError(f"{at}malformed config: {getattr(exc, 'problem', exc)}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config document must be a mapping of key: value pairs")
    return spec_from_mapping(data, key_lines(text))


def derive_seed(master: int, n: int, s: float, q: float, k: int, replicate: int) -> int:
    """64-bit run seed keyed by the grid point's values and the replicate index."""
    seq = np.random.SeedSequence(
        int(master), spawn_key=(int(n), round(s * 10**6), round(q * 10**6), int(k), int(replicate)))
    hi, lo = seq.generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)


@lru_cache(maxsize=64)
def _network(n: int, s: float, q: float, zipf_over: str) -> ManaDistribution:
    return build_network(n, s, q, zipf_over)


def _run_one(task):
    run_id, seed, n, s, q, k, spec = task
    dist = _network(n, s, q, spec.zipf_over)
    config = replace(spec.base, k=k)
    out = run_instance(dist, config, spec.strategy, spec.detection, master_seed=seed)
    first_detection = min((e.round for e in out.detection_events), default=None)
    row = {
        "run_id": run_id, "seed": seed, "n": n, "s": s, "q": q, "k": k,
        "strategy": spec.strategy.kind, "improvements": config.improvements_mask,
        "rounds_used": out.rounds_used, "all_finalized": int(out.all_finalized),
        "minority_mana": out.minority_mana, "minority_nodes": out.minority_nodes,
        "failure_mana_mode": int(out.failure_mana_mode),
        "failure_node_mode": int(out.failure_node_mode),
        "detections": len({e.accused for e in out.detection_events}),
    }
    return row, first_detection


def wilson_interval(count: int, total: int) -> tuple:
    from statsmodels.stats.proportion import proportion_confint

    lo, hi = proportion_confint(count, total, alpha=0.05, method="wilson")
    # the endpoints are exactly 0 and 1 at the extremes; drop rounding residue
    lo = 0.0 if count == 0 else max(0.0, float(lo))
    hi = 1.0 if count == total else min(1.0, float(hi))
    return lo, hi


@dataclass
class ExperimentSummary:
    rows: list
    runs: list = field(repr=False, default_factory=list)

    def row(self, **match) -> dict:
        for r in self.rows:
            if all(r[k] == v for k, v in match.items()):
                return r
        raise KeyError(match)


def _summarize(spec: ExperimentSpec, point, results) -> dict:
    n, s, q, k = point
    runs = [r for r, _ in results]
    failed_mana = sum(r["failure_mana_mode"] for r in runs)
    failed_node = sum(r["failure_node_mode"] for r in runs)
    failures = failed_mana if spec.base.agreement_mode == "mana" else failed_node
    total = len(runs)
    lo, hi = wilson_interval(failures, total)
    first = [d for _, d in results if d is not None]
    return {
        "n": n, "s": s, "q": q, "k": k, "strategy": spec.strategy.kind,
        "improvements": spec.base.improvements_mask, "p_b": spec.detection.p_b,
        "runs": total, "failures": failures, "failure_rate": failures / total,
        "ci_low": lo, "ci_high": hi,
        "failures_mana_mode": failed_mana, "failures_node_mode": failed_node,
        "mean_rounds": sum(r["rounds_used"] for r in runs) / total,
        "non_finalized": sum(1 - r["all_finalized"] for r in runs),
        "detected_runs": len(first), "detection_rate": len(first) / total,
        "mean_first_detection_round": sum(first) / len(first) if first else "",
    }


def run_experiment(spec: ExperimentSpec, out_dir: str | Path | None = None,
                   workers: int = 1) -> ExperimentSummary:
    """Run every grid point ``spec.runs`` times and aggregate failure rates.

    With ``out_dir`` set, writes ``runs.csv``, ``summary.csv`` and
    ``manifest.json`` there. Results do not depend on ``workers``.
    """
    # every grid point must build before any run starts
    for n, s, q, _k in spec.grid():
        build_network(n, s, q, spec.zipf_over)

    tasks = []
    run_id = 0
    for point in spec.grid():
        n, s, q, k = point
        for rep in range(spec.runs):
            tasks.append((run_id, derive_seed(spec.seed, n, s, q, k, rep), n, s, q, k, spec))
            run_id += 1

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (8 * workers))))
    else:
        results = [_run_one(t) for t in tasks]

    rows = []
    for g, point in enumerate(spec.grid()):
        chunk = results[g * spec.runs:(g + 1) * spec.runs]
        rows.append(_summarize(spec, point, chunk))
        log.info("n=%s s=%s q=%s k=%s: %d/%d failures", *point, rows[-1]["failures"], spec.runs)

    summary = ExperimentSummary(rows=rows, runs=[r for r, _ in results])
    if out_dir is not None:
        write_outputs(spec, summary, Path(out_dir))
    return summary


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def manifest(spec: ExperimentSpec) -> dict:
    return {
        "package_version": __version__,
        "config": spec.to_config(),
        "improvement_bits": {name: 1 << i for i, name in enumerate(IMPROVEMENTS)},
        "stream_labels": STREAM_LABELS,
        "seed_rule": "SeedSequence(seed, spawn_key=(n, round(s*1e6), round(q*1e6), k, replicate))",
    }


def write_outputs(spec: ExperimentSpec, summary: ExperimentSummary, out_dir: Path) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "runs.csv").write_text(to_csv(summary.runs, RUN_COLUMNS))
        (out_dir / "summary.csv").write_text(to_csv(summary.rows, SUMMARY_COLUMNS))
        (out_dir / "manifest.json").write_text(json.dumps(manifest(spec), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write experiment outputs to {out_dir}: {exc}") from exc


def load_manifest(path: str | Path) -> ExperimentSpec:
    data = json.loads(Path(path).read_text())
    if "config" not in data:
        raise ConfigError(f"{path}: not a run manifest (no 'config' entry)")
    return spec_from_mapping(data["config"])
