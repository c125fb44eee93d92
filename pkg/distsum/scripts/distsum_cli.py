#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved

"""
Command-line entry point for running experiments and inspecting instances.

Example:

    To run one experiment config and write its records, you can enter:

    >>>  python -m distsum run --config experiments/f0_distinct.json --out results.csv

    Mixing times of a topology:

    >>>  python -m distsum mixing-time --graph clique:16 --lam 1e-4
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from distsum import oracles
from distsum.graph import GraphSpec, generate, mixing_time
from distsum.harness import (
    Constants,
    ExperimentConfig,
    InvalidConfigException,
    load_document,
    run_experiment,
    sweep,
    write_records,
)
from distsum.utils import stats


logger = logging.getLogger("distsum")


def _emit(text: str, out: Optional[str]):
    if out:
        with open(out, "w") as f:
            f.write(text + "\n")
    else:
        print(text)


def _write(records, out: Optional[str]):
    if out:
        write_records(records, out)
    else:
        for record in records:
            print(record.to_json())


def _run(args) -> int:
    config = ExperimentConfig.load(args.config)
    records = run_experiment(
        config,
        constants=Constants.from_env(),
        n_jobs=args.jobs,
        progress=not args.quiet,
        track_stats=args.tensorboard is not None,
    )
    _write(records, args.out)
    return 0


def _sweep(args) -> int:
    document = load_document(args.config)
    base = ExperimentConfig.from_dict(document["base"])
    records = sweep(
        base,
        document["grid"],
        constants=Constants.from_env(),
        n_jobs=args.jobs,
        progress=not args.quiet,
        track_stats=args.tensorboard is not None,
    )
    _write(records, args.out)
    return 0


def _mixing_time(args) -> int:
    g = generate(GraphSpec.parse(args.graph))
    result = {"graph": args.graph, "n": g.n, "m": g.m, "tau": mixing_time(g)}
    for lam in args.lam or []:
        result[f"tau({lam:g})"] = mixing_time(g, lam)
    _emit(json.dumps(result, sort_keys=True), args.out)
    return 0


def _oracle(args) -> int:
    vals = oracles.load_instance(args.instance, args.n, args.N)
    _emit(json.dumps(oracles.summary(vals, top=args.top), sort_keys=True), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distsum", description="Distributed summarization simulator")
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: WARNING)",
    )
    parser.add_argument("-q", "--quiet", action="store_true", help="Hide progress bars")
    parser.add_argument(
        "--tensorboard",
        default=None,
        metavar="DIR",
        help="Report rounds, messages, congestion and errors per algorithm to TensorBoard in DIR",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one experiment config (JSON or YAML)")
    run.add_argument("-c", "--config", required=True, help="Experiment config file")
    run.add_argument("-o", "--out", default=None, help="Output file (.csv or .jsonl); stdout if omitted")
    run.add_argument("-j", "--jobs", type=int, default=1, help="Parallel trials (default: 1)")
    run.set_defaults(handler=_run)

    grid = sub.add_parser("sweep", help="Run a base config over a parameter grid")
    grid.add_argument("-c", "--config", required=True, help="File with 'base' and 'grid' entries")
    grid.add_argument("-o", "--out", default=None, help="Output file (.csv or .jsonl); stdout if omitted")
    grid.add_argument("-j", "--jobs", type=int, default=1, help="Parallel trials (default: 1)")
    grid.set_defaults(handler=_sweep)

    mix = sub.add_parser("mixing-time", help="Print the mixing times of a topology")
    mix.add_argument("-g", "--graph", required=True, help="Topology, e.g. clique:16 or random-regular:64:8")
    mix.add_argument(
        "-l",
        "--lam",
        type=float,
        nargs="+",
        default=None,
        help="Thresholds lambda for tau(lambda), space separated",
    )
    mix.add_argument("-o", "--out", default=None, help="Output file; stdout if omitted")
    mix.set_defaults(handler=_mixing_time)

    oracle = sub.add_parser("oracle", help="Print exact statistics of an instance file")
    oracle.add_argument("-i", "--instance", required=True, help="File of 'nodeId value' lines")
    oracle.add_argument("-n", type=int, default=None, help="Number of nodes (default: largest id)")
    oracle.add_argument("-N", type=int, default=None, help="Value domain bound (default: largest value)")
    oracle.add_argument("--top", type=int, default=10, help="Length of the top list (default: 10)")
    oracle.add_argument("-o", "--out", default=None, help="Output file; stdout if omitted")
    oracle.set_defaults(handler=_oracle)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    if args.tensorboard is not None:
        stats.set_global_summary_writer(stats.SummaryWriter(log_dir=args.tensorboard))
    try:
        return args.handler(args)
    except (InvalidConfigException, ValueError, KeyError, OSError) as e:
        logger.error("%s", e)
        print(f"distsum: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
