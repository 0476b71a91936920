"""Monte-Carlo experiments: replicated runs of allocation policies over
a set of budgets, with per-run tables, per-cell summaries and report
files"""

import json
import logging
import math
from collections import namedtuple
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .chains import gini_index
from .common import ExperimentFailed, fill_verbose_argument
from .concentration import n_cutoff
from .config import load_config
from .policies import run_policy, theory_bounds

logger = logging.getLogger(__name__)

RUN_COLUMNS = [
    "run_id",
    "policy",
    "n",
    "replication",
    "seed",
    "L",
    "L_prime",
    "L_pseudo",
    "nL",
    "pseudo_excess",
    "event_c",
]
CURVE_STATISTICS = ["median_nL", "mean_nL", "q10_nL", "q90_nL", "Lambda"]
REPORT_FILES = {"csv": "runs.csv", "json": "summary.json", "long": "curves.csv"}

RunTask = namedtuple("RunTask", ["run_id", "policy", "budget", "replication", "seed"])

# Set in each worker process by _init_worker
_WORKER = {}


def run_columns(num_chains):
    """Fixed column order of the per-run table"""
    return (
        RUN_COLUMNS
        + [f"L_{k + 1}" for k in range(num_chains)]
        + [f"T_{k + 1}" for k in range(num_chains)]
        + [f"frac_{k + 1}" for k in range(num_chains)]
    )


def _init_worker(instance, settings):
    _WORKER["instance"] = instance
    _WORKER["settings"] = settings


def _run_task(task):
    """Run one replication cell, returning its row of the per-run table"""
    settings = _WORKER["settings"]
    result = run_policy(
        _WORKER["instance"],
        task.policy,
        task.budget,
        settings["delta"],
        task.seed,
        snapshot_mode=settings["snapshot_mode"],
        c=settings["c"],
        alpha=settings["alpha"],
        full_snapshot_cap=settings["full_snapshot_cap"],
    )
    row = {
        "run_id": task.run_id,
        "policy": task.policy,
        "n": task.budget,
        "replication": task.replication,
        "seed": task.seed,
        "event_c": result.event_c,
    }
    row.update(result.loss_report.as_dict())
    return row


def make_tasks(config):
    """All replication cells, in policy, budget, replication order"""
    tasks = []
    for policy in config.policies:
        for budget in config.budgets:
            for replication in range(config.replications):
                tasks.append(
                    RunTask(
                        run_id=len(tasks),
                        policy=policy,
                        budget=budget,
                        replication=replication,
                        seed=config.base_seed + replication,
                    )
                )
    return tasks


@dataclass(eq=False)
class ResultSet:
    """Outcome of an experiment: the instance, the configuration and one
    row per run"""

    instance: object
    config: object
    runs: pd.DataFrame

    def summary_df(self):
        """Per (policy, n) aggregates of the runs"""
        return summarize_runs(self.runs, self.instance.num_chains)

    def theory(self, budget):
        """TheoryBounds at one budget"""
        return theory_bounds(self.instance, budget, self.config.delta, self.config.c)


def _event_c_frequency(series):
    values = series.dropna()
    if values.empty:
        return np.nan
    return float(values.astype(float).mean())


def summarize_runs(runs, num_chains):
    """Aggregate per-run rows into one row per (policy, n) cell

    Args:
        runs (pd.DataFrame): Per-run table
        num_chains (int): K

    Returns:
        pd.DataFrame
    """
    aggregations = {
        "count": ("L", "count"),
        "median_L": ("L", "median"),
        "mean_L": ("L", "mean"),
        "q10_L": ("L", lambda x: x.quantile(0.1)),
        "q90_L": ("L", lambda x: x.quantile(0.9)),
        "median_nL": ("nL", "median"),
        "mean_nL": ("nL", "mean"),
        "q10_nL": ("nL", lambda x: x.quantile(0.1)),
        "q90_nL": ("nL", lambda x: x.quantile(0.9)),
    }
    for k in range(num_chains):
        aggregations[f"median_frac_{k + 1}"] = (f"frac_{k + 1}", "median")
        aggregations[f"mean_frac_{k + 1}"] = (f"frac_{k + 1}", "mean")
    aggregations["event_c_frequency"] = ("event_c", _event_c_frequency)
    if runs.empty:
        return pd.DataFrame(columns=["policy", "n"] + list(aggregations))
    return runs.groupby(["policy", "n"], sort=False).agg(**aggregations).reset_index()


def run_experiment(config, instance=None):
    """Run every replication cell of the configuration.

    Seeds are base_seed + replication, shared across policies and
    budgets. With jobs > 1 the cells run in a process pool, results are
    collected in task order so outputs do not depend on scheduling.

    Args:
        config (ExperimentConfig)
        instance (ProblemInstance): Use this instead of resolving the
            configured instance source

    Returns:
        ResultSet

    Raises:
        ExperimentFailed: naming the failing (policy, budget, seed) cell
    """
    if instance is None:
        instance = config.resolve_instance()
    settings = {
        "delta": config.delta,
        "c": config.c,
        "alpha": config.alpha,
        "snapshot_mode": config.snapshot_mode,
        "full_snapshot_cap": config.full_snapshot_cap,
    }
    tasks = make_tasks(config)
    logger.info(
        "Running %d runs (%d policies, %d budgets, %d replications) with %d job(s)",
        len(tasks),
        len(config.policies),
        len(config.budgets),
        config.replications,
        config.jobs,
    )
    rows = []
    if config.jobs > 1:
        chunksize = max(1, len(tasks) // (4 * config.jobs))
        with ProcessPoolExecutor(
            max_workers=config.jobs,
            initializer=_init_worker,
            initargs=(instance, settings),
        ) as executor:
            results = executor.map(_run_task, tasks, chunksize=chunksize)
            for task in tasks:
                try:
                    rows.append(next(results))
                except Exception as err:
                    logger.error("Run %d failed", task.run_id)
                    raise ExperimentFailed(
                        task.policy, task.budget, task.seed, err
                    ) from err
    else:
        _init_worker(instance, settings)
        for task in tasks:
            try:
                rows.append(_run_task(task))
            except Exception as err:
                logger.error("Run %d failed", task.run_id)
                raise ExperimentFailed(
                    task.policy, task.budget, task.seed, err
                ) from err
    runs = pd.DataFrame(rows, columns=run_columns(instance.num_chains))
    return ResultSet(instance=instance, config=config, runs=runs)


def _finite_or_none(value):
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def instance_block(instance, delta):
    """Instance summary for the JSON report"""
    block = {
        "K": instance.num_chains,
        "S": instance.num_states,
        "Lambda": instance.lambda_total,
        "eta": instance.eta.tolist(),
        "sum_gini": [float(gini_index(trans).sum()) for trans in instance.transitions],
        "H": None,
        "min_stationary": None,
        "spectral_gap": None,
        "pseudo_spectral_gap": None,
        "n_cutoff": None,
    }
    if instance.analyzed:
        analyses = instance.analyses
        block["H"] = [analysis.inv_stationary_sum for analysis in analyses]
        block["min_stationary"] = [analysis.min_stationary for analysis in analyses]
        block["spectral_gap"] = [analysis.spectral_gap for analysis in analyses]
        block["pseudo_spectral_gap"] = [
            analysis.pseudo_spectral_gap for analysis in analyses
        ]
        block["n_cutoff"] = n_cutoff(instance, delta)
    return block


def summary_dict(results):
    """The JSON summary: instance block, settings and per-cell aggregates
    with the loss bounds at each budget"""
    config = results.config
    cells = []
    for record in results.summary_df().to_dict(orient="records"):
        cell = {"policy": record.pop("policy"), "n": int(record.pop("n"))}
        cell.update({key: _finite_or_none(value) for key, value in record.items()})
        cell["count"] = int(record["count"])
        cell["theory"] = {
            key: _finite_or_none(value)
            for key, value in results.theory(cell["n"]).as_dict().items()
        }
        cells.append(cell)
    return {
        "instance": instance_block(results.instance, config.delta),
        "settings": {
            "policies": list(config.policies),
            "budgets": list(config.budgets),
            "delta": config.delta,
            "c": config.c,
            "alpha": config.alpha,
            "replications": config.replications,
            "base_seed": config.base_seed,
            "snapshot_mode": config.snapshot_mode,
        },
        "cells": cells,
    }


def curves_df(results):
    """Long-format table of n L statistics against n for plotting"""
    summary = results.summary_df()
    if summary.empty:
        return pd.DataFrame(columns=["policy", "n", "statistic", "value"])
    summary = summary.assign(Lambda=results.instance.lambda_total)
    curves = summary.melt(
        id_vars=["policy", "n"],
        value_vars=CURVE_STATISTICS,
        var_name="statistic",
        value_name="value",
    )
    return curves.sort_values(["policy", "n"], kind="stable").reset_index(drop=True)


def emit_report(results, formats, directory):
    """Write the requested report files.

    Args:
        results (ResultSet)
        formats (list): Subset of csv, json and long
        directory (str or Path): Created if missing

    Returns:
        list of written Paths
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if results.runs.empty:
        logger.warning("Empty result set, writing headers only")
    written = []
    for fmt in formats:
        if fmt not in REPORT_FILES:
            raise ValueError(f"Unknown report format {fmt}")
        path = directory / REPORT_FILES[fmt]
        logger.info("Writing %s", str(path))
        if fmt == "csv":
            results.runs.to_csv(path, index=False)
        elif fmt == "json":
            path.write_text(json.dumps(summary_dict(results), indent=2) + "\n")
        else:
            curves_df(results).to_csv(path, index=False)
        written.append(path)
    return written


def df(results):
    """The per-run table of a ResultSet"""
    return results.runs


def fill_parser(parser):
    """Set up sys.argv parsers.

    Arguments:
        parser: argparse.ArgumentParser or argparse.subparser
    """
    parser.add_argument(
        "--config", required=True, help="Experiment configuration, JSON or YAML."
    )
    parser.add_argument(
        "--out", type=str, help="Output directory, overrides the configuration."
    )
    parser.add_argument(
        "--jobs",
        type=int,
        help="Number of worker processes, overrides the configuration.",
    )
    parser.add_argument(
        "--seed", type=int, help="Base seed, overrides the configuration."
    )
    fill_verbose_argument(parser)
    return parser


def run_main(args):
    """Entry-point for the run subcommand"""
    if args.verbose:
        logging.basicConfig(level=logging.INFO)
    config = load_config(args.config).with_overrides(
        out=args.out, jobs=args.jobs, seed=args.seed
    )
    results = run_experiment(config)
    for path in emit_report(results, config.formats, config.output_directory):
        logger.info("Wrote %s", str(path))
