import json
import os

import numpy as np
import pandas as pd
import pytest

import lib.glob as glob
glob.TEST_INSTANCE = True

from lib.autodiff import ContractViolation
from lib.egp import METRIC_COLUMNS, EnsembleGP, aggregate_runs
from lib.experiment import from_dict, with_overrides
from lib.misc.random import RandomStreams
from lib.systems import SyntheticSystem, simulate, write_csv
from lib.training import load_checkpoint

TINY = {
    "run": {"name": "tiny"},
    "system": {"kind": "kink", "T": 80},
    "model": {"M": 4},
    "train": {"epochs": 2, "n_ensemble": 8, "lr": 0.01},
    "eval": {"n_ensemble": 8, "horizon": 10, "stride": 15, "grid_points": 25},
}


def tiny(**sections):
    raw = {name: dict(values) for name, values in TINY.items()}
    for name, values in sections.items():
        raw.setdefault(name, {}).update(values)
    return from_dict(raw)


@pytest.fixture()
def egp(tmpdir):
    return EnsembleGP(str(tmpdir))


def test_registries(egp):
    assert "etgpssm-dnn" in egp.variants and "enkf" in egp.variants
    assert set(egp.systems) == {"kink", "lorenz96", "linear-gaussian-test"}


def test_run_writes_every_artifact(egp):
    manifest = egp.run(tiny())
    assert manifest.status == "done"
    assert set(manifest.artifacts) == {"checkpoint", "elbo_trace", "metrics", "config", "filtered", "transition"}
    for name in list(manifest.artifacts.values()) + ["manifest.json"]:
        assert os.path.exists(os.path.join(manifest.output_dir, name)), name
    assert not [f for f in os.listdir(manifest.output_dir) if f.endswith(".tmp")]

    metrics = pd.read_csv(os.path.join(manifest.output_dir, "metrics.csv"), dtype={"config_hash": str})
    assert list(metrics.columns) == METRIC_COLUMNS
    assert len(metrics) == 1
    row = metrics.iloc[0]
    assert row["variant"] == "etgpssm-dnn" and row["config_hash"] == manifest.config_hash
    assert 0.0 <= row["coverage"] <= 1.0 and row["rmse"] > 0.0 and np.isfinite(row["forecast_rmse"])
    assert np.isfinite(row["transition_rmse"]) and np.isfinite(row["constant_rmse"])

    filtered = pd.read_csv(os.path.join(manifest.output_dir, "filtered.csv"))
    assert list(filtered.columns) == ["t", "true_0", "mean_0", "lower_0", "upper_0"]
    assert len(filtered) == 80
    assert np.all(filtered["lower_0"] <= filtered["upper_0"])

    transition = pd.read_csv(os.path.join(manifest.output_dir, "transition.csv"))
    assert list(transition.columns) == ["x", "mean", "lower", "upper", "true"]
    assert transition["x"].iloc[0] == pytest.approx(-3.0) and transition["x"].iloc[-1] == pytest.approx(1.5)

    _, digest, variant = load_checkpoint(os.path.join(manifest.output_dir, "checkpoint.npz"))
    assert digest == manifest.config_hash and variant == "etgpssm-dnn"
    with open(os.path.join(manifest.output_dir, "manifest.json")) as f:
        assert json.load(f)["artifacts"] == manifest.artifacts


def test_runs_are_reproducible(tmpdir):
    rows = []
    for i in range(2):
        cfg = with_overrides(tiny(), {"run.output": os.path.join(str(tmpdir), f"run{i}")})
        manifest = EnsembleGP(str(tmpdir)).run(cfg)
        rows.append(pd.read_csv(os.path.join(manifest.output_dir, "metrics.csv")).drop(columns=["wall_time"]))
    pd.testing.assert_frame_equal(rows[0], rows[1])


def test_run_directory_is_named_after_the_config(egp):
    cfg = tiny().resolved()
    directory = egp.run_directory(cfg)
    assert os.path.basename(directory).startswith("tiny-etgpssm-dnn-")
    assert directory.endswith("-s0")
    assert egp.run_directory(with_overrides(cfg, {"run.output": "/x/y"})) == "/x/y"


def test_lorenz_run_without_transition_grid(egp):
    cfg = tiny(system={"kind": "lorenz96", "d_x": 4, "T": 40, "r_var": 1.0}, eval={"horizon": 5, "stride": 5})
    manifest = egp.run(cfg)
    assert "transition" not in manifest.artifacts
    metrics = pd.read_csv(os.path.join(manifest.output_dir, "metrics.csv"))
    assert np.isnan(metrics["transition_rmse"].iloc[0])
    assert metrics["obs_rmse"].iloc[0] > 0.0


def test_known_dynamics_filter(egp):
    manifest = egp.run(tiny(model={"variant": "enkf"}))
    metrics = pd.read_csv(os.path.join(manifest.output_dir, "metrics.csv")).iloc[0]
    assert metrics["transition_rmse"] == pytest.approx(0.0, abs=1e-12)


def test_short_test_split_skips_the_forecast(egp):
    manifest = egp.run(tiny(eval={"horizon": 50}))
    metrics = pd.read_csv(os.path.join(manifest.output_dir, "metrics.csv"))
    assert np.isnan(metrics["forecast_rmse"].iloc[0])


def test_csv_dataset(egp, tmpdir):
    path = os.path.join(str(tmpdir), "series.csv")
    data = simulate(SyntheticSystem(kind="linear-gaussian-test", d_x=2, T=60))
    data.states = None
    write_csv(data, path)
    cfg = tiny(system={"kind": "csv", "path": path, "T": None}, model={"variant": "ad-enkf-dnn"})
    dataset = egp.build_dataset(cfg)
    assert dataset.d_y == 2 and dataset.split == 30 and dataset.system is None
    np.testing.assert_allclose(dataset.train.mean(axis=0), 0.0, atol=1e-12)

    manifest = egp.run(cfg)
    filtered = pd.read_csv(os.path.join(manifest.output_dir, "filtered.csv"))
    assert "true_0" not in filtered.columns and "mean_1" in filtered.columns

    with pytest.raises(FileNotFoundError):
        egp.build_dataset(with_overrides(cfg, {"system.path": os.path.join(str(tmpdir), "missing.csv")}))


def test_observation_noise_is_initialized_relative_to_the_data(egp):
    cfg = tiny(model={"r_init": 0.5}).resolved()
    dataset = egp.build_dataset(cfg)
    model = egp.build_model(cfg, dataset, RandomStreams(0).init)
    np.testing.assert_allclose(model.ssm.R.values, 0.5 * dataset.train.var(axis=0))


def test_sweep_records_failures_and_aggregates(egp, tmpdir):
    cfg = tiny()
    cfg.grid = {"system.d_x": [1, 2], "run.seed": [0, 1]}
    root = os.path.join(str(tmpdir), "sweep")
    runs, aggregate = egp.sweep(cfg, n_jobs=1, output=root)
    assert len(runs) == 4
    assert list(runs["status"]).count("failed") == 2
    assert all(runs.loc[runs["system.d_x"] == 2, "error"].str.startswith("ContractViolation"))
    assert list(aggregate["system.d_x"]) == [1]
    assert aggregate["runs"].iloc[0] == 2
    assert "rmse_mean" in aggregate.columns and "rmse_std" in aggregate.columns
    assert os.path.exists(os.path.join(root, "runs.csv")) and os.path.exists(os.path.join(root, "aggregate.csv"))
    assert os.path.isdir(os.path.join(root, "point-000"))


def test_sweep_without_grid_is_one_run(egp, tmpdir):
    runs, aggregate = egp.sweep(tiny(), output=os.path.join(str(tmpdir), "single"))
    assert len(runs) == 1 and runs["status"].iloc[0] == "done"
    assert aggregate["runs"].iloc[0] == 1


def test_aggregate_pools_seeds():
    runs = pd.DataFrame(
        {
            "system.r_var": [0.1, 0.1, 0.2, 0.2],
            "run.seed": [0, 1, 0, 1],
            "status": ["done", "done", "done", "failed"],
            "rmse": [1.0, 3.0, 2.0, np.nan],
        }
    )
    table = aggregate_runs(runs, ["system.r_var"])
    assert list(table["runs"]) == [2, 1]
    assert list(table["rmse_mean"]) == [2.0, 2.0]
    assert table["rmse_std"].iloc[0] == pytest.approx(np.sqrt(2.0))


def test_kink_system_rejects_two_dimensions(egp):
    with pytest.raises(ContractViolation):
        egp.build_dataset(tiny(system={"d_x": 2}))


@pytest.mark.slow
def test_kink_transition_is_learned(egp):
    cfg = from_dict({"run": {"name": "kink-slow"}, "system": {"kind": "kink", "r_var": 0.008}})
    manifest = egp.run(cfg)
    metrics = pd.read_csv(os.path.join(manifest.output_dir, "metrics.csv")).iloc[0]
    assert metrics["rmse"] < metrics["obs_rmse"]
    assert metrics["transition_rmse"] <= 0.5 * metrics["constant_rmse"]


@pytest.mark.slow
def test_lorenz_ordering(egp):
    scores = {}
    for variant in ("etgpssm-dnn", "ad-enkf-dnn", "enkf"):
        cfg = from_dict(
            {
                "run": {"name": "lorenz-slow"},
                "system": {"kind": "lorenz96", "d_x": 20, "T": 300},
                "model": {"variant": variant},
                "train": {"epochs": 500},
            }
        )
        manifest = egp.run(cfg)
        scores[variant] = pd.read_csv(os.path.join(manifest.output_dir, "metrics.csv")).iloc[0]
    assert scores["etgpssm-dnn"]["rmse"] < scores["etgpssm-dnn"]["obs_rmse"]
    assert scores["enkf"]["rmse"] < scores["etgpssm-dnn"]["rmse"]
    assert scores["etgpssm-dnn"]["rmse"] < scores["ad-enkf-dnn"]["rmse"]
