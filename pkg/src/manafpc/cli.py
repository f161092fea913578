"""Command line entry point: ``manafpc {simulate,bounds,analyze,loadstats,mana}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import analysis, detection, harness
from .adversary import AdversaryStrategy
from .mana import build_network, effective_node_count
from .protocol import ProtocolConfig, run_instance
from .sampling import substream

# simulate flags that mirror config keys; None means "not given"
_SIM_FLAGS = [
    ("n", int, "+"), ("s", float, "+"), ("q", float, "+"), ("k", int, "+"),
    ("p0", float, None), ("tau", float, None), ("beta", float, None), ("l", int, None),
    ("l2", int, None), ("max_it", int, None), ("alpha", float, None), ("tau_final", float, None),
    ("p_b", float, None), ("strategy", str, None), ("drop_p", float, None),
    ("improvements", str, None), ("agreement_mode", str, None), ("draw_cap", int, None),
    ("zipf_over", str, None), ("runs", int, None), ("seed", int, None),
]


def _write_csv(rows, header, out) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)


def cmd_simulate(args) -> int:
    lines = {}
    if args.manifest:
        spec = harness.load_manifest(args.manifest)
        mapping = spec.to_config()
    elif args.config:
        text = Path(args.config).read_text()
        spec = harness.parse_config(text)  # validates the file on its own
        mapping = spec.to_config()
        lines = harness.key_lines(text)
    else:
        mapping = {}
    for key, _type, _nargs in _SIM_FLAGS:
        value = getattr(args, key)
        if value is not None:
            mapping[key] = value
    spec = harness.spec_from_mapping(mapping, lines)

    summary = harness.run_experiment(spec, out_dir=args.out, workers=args.workers)
    sys.stdout.write(harness.to_csv(summary.rows, harness.SUMMARY_COLUMNS))

    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["n", "s", "q", "k", "seed", "round", "threshold", "undefined_eta", "opinions"])
            for n, s, q, k in spec.grid():
                seed = harness.derive_seed(spec.seed, n, s, q, k, 0)
                out = run_instance(build_network(n, s, q, spec.zipf_over), replace(spec.base, k=k),
                                   spec.strategy, spec.detection, master_seed=seed, trace=True)
                for rec in out.trace:
                    writer.writerow([n, s, q, k, seed, rec.round, repr(rec.threshold),
                                     rec.undefined_eta, rec.opinions_rle()])
    return 0


def cmd_bounds(args) -> int:
    rows = []
    if args.f is not None:
        gamma = detection.gamma_uniform(args.n, args.k, args.p_b, args.f)
        bound = detection.detection_bound_uniform(args.n, args.k, args.p_b, args.f)
        rows.append(["uniform", args.n, args.k, args.p_b, args.f, "", repr(gamma), repr(bound)])
    if args.m_b is not None:
        gamma = detection.gamma_mana(args.p_b, args.m_b)
        bound = detection.detection_bound_mana(args.n, args.p_b, args.m_b)
        rows.append(["mana", args.n, "", args.p_b, "", args.m_b, repr(gamma), repr(bound)])
    if not rows:
        raise ValueError("give --f (uniform bound) and/or --m-b (mana bound)")
    header = ["kind", "n", "k", "p_b", "f", "m_b", "gamma", "bound"]
    _write_csv(rows, header, sys.stdout)
    if args.csv:
        path = Path(args.csv)
        fresh = not path.exists() or path.stat().st_size == 0
        with path.open("a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if fresh:
                writer.writerow(header)
            writer.writerows(rows)
    return 0


def cmd_voting_power(args) -> int:
    scheme = analysis.VotingScheme(f=args.f, g=args.g)
    if args.samples:
        report = analysis.voting_power_mc(args.manas, scheme, args.k, args.samples,
                                          substream(args.seed, "analysis"))
        rows = [[i + 1, m, repr(float(v)), repr(float(e))]
                for i, (m, v, e) in enumerate(zip(args.manas, report.powers, report.stderr))]
    else:
        report = analysis.voting_power_exact(args.manas, scheme, args.k)
        rows = [[i + 1, m, repr(float(v)), ""] for i, (m, v) in enumerate(zip(args.manas, report.powers))]
    _write_csv(rows, ["node", "mana", "voting_power", "stderr"], sys.stdout)
    return 0


def cmd_fairness(args) -> int:
    scheme = analysis.VotingScheme(f=args.f, g=args.g)
    dev = analysis.fairness_deviation(args.manas, scheme, args.k, args.split_node - 1, args.x)
    _write_csv([[args.f, args.g, args.k, args.split_node, args.x, repr(dev)]],
               ["f", "g", "k", "split_node", "x", "deviation"], sys.stdout)
    return 0


def cmd_quorum_prob(args) -> int:
    rows = []
    for k in args.k:
        for p in args.p:
            for tau in args.tau:
                exact = analysis.exit_probability(k, p, tau)
                bound = analysis.chernoff_bound(k, p, tau) if 0 < tau < 1 and 0 < p < 1 else ""
                rows.append([k, p, tau, repr(exact), repr(bound) if bound != "" else ""])
    _write_csv(rows, ["k", "p", "tau", "exact", "chernoff_bound"], sys.stdout)
    return 0


def cmd_loadstats(args) -> int:
    dist = build_network(args.n, args.s, args.q)
    config = ProtocolConfig(k=args.k, improvements=args.improvements)
    out = run_instance(dist, config, AdversaryStrategy(args.strategy), master_seed=args.seed, trace=True)
    stats = analysis.query_load_stats(out.trace, dist.weights, args.k, args.buckets)
    rows = []
    for first, last, mean in stats.buckets:
        expected = float(stats.expected[first - 1:last].mean())
        rows.append([first, last, repr(mean), repr(expected)])
    _write_csv(rows, ["first_rank", "last_rank", "mean_load", "expected_load"], sys.stdout)
    return 0


def cmd_mana(args) -> int:
    dist = build_network(args.n, args.s, args.q, args.zipf_over)
    dist.to_csv(sys.stdout)
    print(f"n_eff(gamma={args.gamma}) = {effective_node_count(dist, args.gamma)}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manafpc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="replicated protocol runs over a parameter grid")
    src = sim.add_mutually_exclusive_group()
    src.add_argument("--config", help="YAML/JSON experiment file")
    src.add_argument("--manifest", help="manifest.json of an earlier run to replay")
    for key, typ, nargs in _SIM_FLAGS:
        sim.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, nargs=nargs, default=None)
    sim.add_argument("--out", help="directory for runs.csv, summary.csv, manifest.json")
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--trace", help="write a per-round trace of replicate 0 of each grid point")
    sim.set_defaults(func=cmd_simulate)

    bnd = sub.add_parser("bounds", help="berserk detection lower bounds")
    bnd.add_argument("--n", type=int, required=True)
    bnd.add_argument("--k", type=int, default=20)
    bnd.add_argument("--p-b", dest="p_b", type=float, required=True)
    bnd.add_argument("--f", type=int, help="answers of opinion 0 (uniform bound)")
    bnd.add_argument("--m-b", dest="m_b", type=float, help="berserk node mana (mana bound)")
    bnd.add_argument("--csv", help="append rows to this CSV file")
    bnd.set_defaults(func=cmd_bounds)

    ana = sub.add_parser("analyze", help="voting power, fairness and quorum exit probabilities")
    asub = ana.add_subparsers(dest="analysis", required=True)
    for name, func in (("voting-power", cmd_voting_power), ("fairness-check", cmd_fairness)):
        p = asub.add_parser(name)
        p.add_argument("--manas", type=float, nargs="+", required=True)
        p.add_argument("--k", type=int, required=True)
        p.add_argument("--f", default="identity", choices=sorted(analysis.SAMPLING_FUNCTIONS))
        p.add_argument("--g", default="one", choices=sorted(analysis.OPINION_WEIGHTS))
        p.set_defaults(func=func)
        if name == "voting-power":
            p.add_argument("--samples", type=int, help="Monte Carlo estimate instead of enumeration")
            p.add_argument("--seed", type=int, default=0)
        else:
            p.add_argument("--split-node", type=int, default=1, help="1-based node to split")
            p.add_argument("--x", type=float, default=0.5)
    qp = asub.add_parser("quorum-prob")
    qp.add_argument("--k", type=int, nargs="+", required=True)
    qp.add_argument("--p", type=float, nargs="+", required=True)
    qp.add_argument("--tau", type=float, nargs="+", required=True)
    qp.set_defaults(func=cmd_quorum_prob)

    ld = sub.add_parser("loadstats", help="per-rank query load of one traced run")
    ld.add_argument("--n", type=int, default=100)
    ld.add_argument("--s", type=float, default=1.0)
    ld.add_argument("--q", type=float, default=0.0)
    ld.add_argument("--k", type=int, default=20)
    ld.add_argument("--strategy", default="mana_ivs")
    ld.add_argument("--improvements", default="none")
    ld.add_argument("--seed", type=int, default=0)
    ld.add_argument("--buckets", type=int, default=10)
    ld.set_defaults(func=cmd_loadstats)

    mn = sub.add_parser("mana", help="export a mana distribution as CSV")
    mn.add_argument("--n", type=int, required=True)
    mn.add_argument("--s", type=float, default=1.0)
    mn.add_argument("--q", type=float, default=0.0)
    mn.add_argument("--gamma", type=float, default=1.0)
    mn.add_argument("--zipf-over", dest="zipf_over", default="honest", choices=["honest", "all"])
    mn.set_defaults(func=cmd_mana)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
