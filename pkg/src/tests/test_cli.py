import os

import pandas as pd
import pytest

import lib.glob as glob
glob.TEST_INSTANCE = True

from cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main

CONFIG = """
[run]
name = "cli"

[system]
kind = "kink"
T = 60

[model]
M = 4

[train]
epochs = 1
n_ensemble = 8

[eval]
n_ensemble = 8
horizon = 5
stride = 10
grid_points = 10
"""


@pytest.fixture()
def config_path(tmpdir):
    path = os.path.join(str(tmpdir), "experiment.toml")
    with open(path, "w") as f:
        f.write(CONFIG)
    return path


def test_summary(capsys):
    assert main([]) == EXIT_OK
    out = capsys.readouterr().out
    assert "etgpssm-dnn" in out and "lorenz96" in out


def test_count_params(tmpdir):
    out = os.path.join(str(tmpdir), "counts.csv")
    assert main(["count-params", "--variant", "etgpssm", "--dx-max", "100", "--out", out]) == EXIT_OK
    frame = pd.read_csv(out)
    assert len(frame) == 100
    assert frame.loc[frame["d_x"] == 100, "param_count"].iloc[0] == 54287


def test_simulate(tmpdir):
    out = os.path.join(str(tmpdir), "lorenz.csv")
    assert main(["simulate", "--system", "lorenz96", "--dx", "5", "--T", "30", "--out", out]) == EXIT_OK
    frame = pd.read_csv(out)
    assert len(frame) == 30
    assert [c for c in frame.columns if c.startswith("y_")] == [f"y_{d}" for d in range(5)]


def test_run_with_overrides(config_path, tmpdir):
    out = os.path.join(str(tmpdir), "run")
    assert main(["run", "--config", config_path, "--seed", "2", "--variant", "ad-enkf-dnn", "--output", out]) == EXIT_OK
    metrics = pd.read_csv(os.path.join(out, "metrics.csv"))
    assert metrics["variant"].iloc[0] == "ad-enkf-dnn"
    assert metrics["seed"].iloc[0] == 2
    for name in ("checkpoint.npz", "elbo_trace.csv", "filtered.csv", "config.json", "manifest.json"):
        assert os.path.exists(os.path.join(out, name))


def test_missing_config_exits_with_config_code(tmpdir, capsys):
    path = os.path.join(str(tmpdir), "nowhere.toml")
    assert main(["run", "--config", path]) == EXIT_CONFIG
    assert "nowhere.toml" in capsys.readouterr().out


def test_invalid_variant_exits_with_config_code(config_path):
    assert main(["run", "--config", config_path, "--variant", "shared-gp"]) == EXIT_CONFIG


def test_missing_dataset_exits_with_config_code(tmpdir):
    path = os.path.join(str(tmpdir), "csv.toml")
    with open(path, "w") as f:
        f.write('[system]\nkind = "csv"\npath = "%s"\n' % os.path.join(str(tmpdir), "absent.csv"))
    assert main(["run", "--config", path, "--output", os.path.join(str(tmpdir), "run")]) == EXIT_CONFIG


def test_sweep_exit_code_reflects_failures(config_path, tmpdir):
    with open(config_path, "a") as f:
        f.write("\n[grid.system]\nd_x = [1, 3]\n")
    assert main(["sweep", "--config", config_path, "--output", os.path.join(str(tmpdir), "sweep")]) == EXIT_RUNTIME
    runs = pd.read_csv(os.path.join(str(tmpdir), "sweep", "runs.csv"))
    assert sorted(runs["status"]) == ["done", "failed"]


def test_regress(tmpdir):
    out = os.path.join(str(tmpdir), "regression.csv")
    args = ["regress", "--model", "warped", "--flow", "sal", "--M", "5", "--n", "20", "--epochs", "3", "--out", out]
    assert main(args) == EXIT_OK
    frame = pd.read_csv(out)
    assert len(frame) == 20
    assert list(frame.columns) == ["x", "y_0", "mean_0", "var_0", "y_1", "mean_1", "var_1"]
