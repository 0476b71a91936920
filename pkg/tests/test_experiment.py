"""Test module for experiment"""

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from bamc import experiment
from bamc.bamccli import main
from bamc.common import ExperimentFailed
from bamc.config import config_from_dict

TESTDIR = Path(__file__).absolute().parent
DATADIR = TESTDIR / "data"


def _config(tmp_path, **kwargs):
    data = {
        "instance": str(DATADIR / "lazy.json"),
        "budgets": [20, 60],
        "policies": ["bamc", "uniform", "oracle-static"],
        "replications": 4,
        "base_seed": 7,
        "outputs": {"directory": str(tmp_path)},
    }
    data.update(kwargs)
    return config_from_dict(data)


def test_make_tasks(tmp_path):
    tasks = experiment.make_tasks(_config(tmp_path))
    assert len(tasks) == 3 * 2 * 4
    assert [task.run_id for task in tasks] == list(range(24))
    assert tasks[0] == experiment.RunTask(0, "bamc", 20, 0, 7)
    assert tasks[5].budget == 60
    assert tasks[5].seed == 8
    # Seeds are shared across policies and budgets
    assert {task.seed for task in tasks} == {7, 8, 9, 10}


def test_run_experiment(tmp_path):
    results = experiment.run_experiment(_config(tmp_path))
    runs = results.runs
    assert list(runs.columns) == experiment.run_columns(2)
    assert len(runs) == 24
    assert (runs[["T_1", "T_2"]].sum(axis=1) == runs["n"]).all()
    assert runs["nL"].to_numpy() == pytest.approx((runs["n"] * runs["L"]).to_numpy())
    assert runs["event_c"].isna().all()
    assert experiment.df(results) is runs

    uniform = runs[runs["policy"] == "uniform"]
    assert (uniform["frac_1"] == 0.5).all()


def test_seed_independence(tmp_path):
    """Replications use different streams"""
    results = experiment.run_experiment(
        _config(tmp_path, replications=30, budgets=[60], policies=["uniform"])
    )
    losses = results.runs["L"]
    assert losses.nunique() > 15
    # Neighbouring seeds give uncorrelated losses
    lagged = np.corrcoef(losses.to_numpy()[:-1], losses.to_numpy()[1:])[0, 1]
    assert abs(lagged) < 0.6


def test_summary(tmp_path):
    results = experiment.run_experiment(_config(tmp_path, snapshot_mode="checkpoints"))
    summary = results.summary_df()
    assert len(summary) == 6
    assert summary[["policy", "n"]].values.tolist() == [
        ["bamc", 20],
        ["bamc", 60],
        ["uniform", 20],
        ["uniform", 60],
        ["oracle-static", 20],
        ["oracle-static", 60],
    ]
    assert (summary["count"] == 4).all()
    assert summary["event_c_frequency"].between(0, 1).all()
    assert (summary["q10_nL"] <= summary["median_nL"]).all()
    assert (summary["median_nL"] <= summary["q90_nL"]).all()
    assert "median_frac_2" in summary

    summary_dict = experiment.summary_dict(results)
    assert summary_dict["instance"]["K"] == 2
    assert summary_dict["instance"]["Lambda"] == pytest.approx(1.18)
    assert summary_dict["instance"]["H"] == pytest.approx([7.2, 4.5])
    assert summary_dict["settings"]["base_seed"] == 7
    cell = summary_dict["cells"][0]
    assert cell["policy"] == "bamc"
    assert cell["n"] == 20
    assert cell["count"] == 4
    assert set(cell["theory"]) == {
        "thm1_bound",
        "thm1_with_second_order",
        "thm2_main",
        "thm2_excess",
        "asymptotic_target",
    }
    assert cell["theory"]["asymptotic_target"] == pytest.approx(1.18 / 20)

    curves = experiment.curves_df(results)
    assert list(curves.columns) == ["policy", "n", "statistic", "value"]
    assert len(curves) == 6 * len(experiment.CURVE_STATISTICS)
    lambdas = curves[curves["statistic"] == "Lambda"]["value"]
    assert lambdas.to_numpy() == pytest.approx([1.18] * 6)


def test_emit_report(tmp_path):
    results = experiment.run_experiment(_config(tmp_path))
    written = experiment.emit_report(results, ("csv", "json", "long"), tmp_path / "out")
    assert [path.name for path in written] == [
        "runs.csv",
        "summary.json",
        "curves.csv",
    ]
    disk_runs = pd.read_csv(tmp_path / "out" / "runs.csv")
    assert len(disk_runs) == 24
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    # No snapshots, so the frequency is missing
    assert summary["cells"][0]["event_c_frequency"] is None
    assert len(pd.read_csv(tmp_path / "out" / "curves.csv")) == 30

    written = experiment.emit_report(results, ("json",), tmp_path / "only_json")
    assert [path.name for path in written] == ["summary.json"]
    with pytest.raises(ValueError):
        experiment.emit_report(results, ("xml",), tmp_path)


def test_empty_results(tmp_path, caplog):
    results = experiment.run_experiment(_config(tmp_path))
    empty = experiment.ResultSet(
        instance=results.instance,
        config=results.config,
        runs=pd.DataFrame(columns=experiment.run_columns(2)),
    )
    experiment.emit_report(empty, ("csv", "json", "long"), tmp_path)
    assert "headers only" in caplog.text
    lines = (tmp_path / "runs.csv").read_text().splitlines()
    assert lines == [",".join(experiment.run_columns(2))]
    assert json.loads((tmp_path / "summary.json").read_text())["cells"] == []
    assert (tmp_path / "curves.csv").read_text().splitlines() == [
        "policy,n,statistic,value"
    ]


def test_reproducible(tmp_path):
    """Identical configurations give byte identical reports"""
    for subdir in ["first", "second"]:
        results = experiment.run_experiment(_config(tmp_path))
        experiment.emit_report(results, ("csv", "json", "long"), tmp_path / subdir)
    for name in ["runs.csv", "summary.json", "curves.csv"]:
        assert (tmp_path / "first" / name).read_bytes() == (
            tmp_path / "second" / name
        ).read_bytes()


def test_parallel_matches_serial(tmp_path):
    serial = experiment.run_experiment(_config(tmp_path, jobs=1))
    parallel = experiment.run_experiment(_config(tmp_path, jobs=2))
    experiment.emit_report(serial, ("csv",), tmp_path / "serial")
    experiment.emit_report(parallel, ("csv",), tmp_path / "parallel")
    assert (tmp_path / "serial" / "runs.csv").read_bytes() == (
        tmp_path / "parallel" / "runs.csv"
    ).read_bytes()


def test_failed_run(tmp_path, mocker):
    mocker.patch("bamc.experiment.run_policy", side_effect=RuntimeError("boom"))
    with pytest.raises(ExperimentFailed) as excinfo:
        experiment.run_experiment(_config(tmp_path))
    assert excinfo.value.policy == "bamc"
    assert excinfo.value.budget == 20
    assert excinfo.value.seed == 7
    assert "boom" in str(excinfo.value)


def test_main(tmp_path, mocker):
    """Test command line interface"""
    mocker.patch(
        "sys.argv",
        [
            "bamc",
            "run",
            "--config",
            str(DATADIR / "experiment.yml"),
            "--out",
            str(tmp_path),
            "--seed",
            "100",
        ],
    )
    main()
    runs = pd.read_csv(tmp_path / "runs.csv")
    assert len(runs) == 3 * 2 * 3
    assert set(runs["seed"]) == {100, 101, 102}
    assert runs["event_c"].isin([True, False]).all()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["settings"]["snapshot_mode"] == "checkpoints"
    assert (tmp_path / "curves.csv").is_file()
