import argparse
import logging
import os
import warnings

import numpy as np
import pandas as pd

from distsum.harness import (
    Constants,
    ExperimentConfig,
    load_document,
    records_frame,
    run_experiment,
    sweep,
    write_records,
)
from distsum.utils import stats


warnings.filterwarnings("ignore")
logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

parser = argparse.ArgumentParser()

parser.add_argument(
    "--experiments",
    default="experiments",
    type=str,
    help="directory of experiment configs (JSON or YAML)",
)
parser.add_argument(
    "--n_runs",
    default=None,
    type=int,
    help="cap the number of seeds per config",
)
parser.add_argument(
    "--jobs",
    default=1,
    type=int,
    help="parallel trials",
)
parser.add_argument(
    "--outdir",
    default=None,
    type=str,
    help="write one .jsonl of records per config into this directory",
)
parser.add_argument(
    "--tensorboard",
    default=None,
    type=str,
    help="report run statistics per algorithm to TensorBoard in this directory",
)

args = parser.parse_args()
constants = Constants.from_env()
track = args.tensorboard is not None
if track:
    stats.set_global_summary_writer(stats.SummaryWriter(log_dir=args.tensorboard))

if args.outdir is not None:
    os.makedirs(args.outdir, exist_ok=True)

summaries = []
for name in sorted(os.listdir(args.experiments)):
    document = load_document(os.path.join(args.experiments, name))
    print(f"Run {name}")
    if "grid" in document:
        base = ExperimentConfig.from_dict(document["base"])
        if args.n_runs is not None:
            base.seeds = base.seeds[: args.n_runs]
        records = sweep(base, document["grid"], constants=constants, n_jobs=args.jobs, track_stats=track)
    else:
        config = ExperimentConfig.from_dict(document)
        if args.n_runs is not None:
            config.seeds = config.seeds[: args.n_runs]
        records = run_experiment(config, constants=constants, n_jobs=args.jobs, track_stats=track)

    if args.outdir is not None:
        write_records(records, os.path.join(args.outdir, os.path.splitext(name)[0] + ".jsonl"))

    frame = records_frame(records)
    frame["ok"] = [r.status == "ok" for r in records]
    for digest, group in frame.groupby("config_digest", sort=False):
        errors = group["rel_error"].dropna().to_numpy(dtype=float)
        rounds = group["rounds"].to_numpy(dtype=float)
        summaries.append(
            {
                "experiment": name,
                "config": digest,
                "trials": len(group),
                "failed": int((~group["ok"]).sum()),
                "median_rel_error": np.median(errors) if len(errors) else np.nan,
                "max_rel_error": np.max(errors) if len(errors) else np.nan,
                "rounds_mean": np.mean(rounds),
                "rounds_std": np.std(rounds),
            }
        )
        print(f"{digest} rounds: {np.mean(rounds):.1f} +/- {np.std(rounds):.1f}")
        if len(errors):
            print(f"{digest} rel_error: {np.mean(errors):.4f} +/- {np.std(errors):.4f}")

summary = pd.DataFrame(summaries)
print(summary.to_string(index=False))
if args.outdir is not None:
    summary.to_csv(os.path.join(args.outdir, "summary.csv"), index=False)
