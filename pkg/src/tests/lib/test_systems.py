import os

import numpy as np
import pytest

import lib.glob as glob
glob.TEST_INSTANCE = True

from lib.autodiff import ContractViolation
from lib.systems import (
    DataFormatException,
    Dataset,
    SimulationException,
    SyntheticSystem,
    kink_f,
    known_dynamics,
    linear_gaussian_matrix,
    load_csv,
    lorenz96_drift,
    simulate,
    split_standardize,
    write_csv,
)


def test_kink_function_values():
    assert kink_f(0.0) == pytest.approx(0.8 + 0.2 * (1.0 - 2.5))
    x = -1.0
    expected = 0.8 + (x + 0.2) * (1 - 5 / (1 + np.exp(2.0))) - 0.5 * np.sin(-2.0)
    assert kink_f(x) == pytest.approx(expected)
    x = 1.0
    kink = 0.8 + 1.2 * (1 - 5 / (1 + np.exp(-2.0)))
    expected = kink * (1 - 0.5 * np.exp(-0.5)) - 0.5 * np.sin(8.0)
    assert kink_f(x) == pytest.approx(expected)


def test_kink_is_discontinuous_at_zero():
    # slope modulation halves the value just right of 0
    assert kink_f(1e-12) == pytest.approx(kink_f(-1e-12) * 0.5, abs=1e-9)


@pytest.mark.parametrize("kind,d_x", [("kink", 1), ("lorenz96", 6), ("linear-gaussian-test", 3)])
def test_simulation_is_deterministic(kind, d_x):
    system = SyntheticSystem(kind=kind, d_x=d_x, T=25, seed=4)
    first, second = simulate(system), simulate(system)
    np.testing.assert_array_equal(first.y, second.y)
    np.testing.assert_array_equal(first.states, second.states)
    assert first.y.shape == first.states.shape == (25, d_x)
    other = simulate(SyntheticSystem(kind=kind, d_x=d_x, T=25, seed=5))
    assert not np.allclose(first.y, other.y)


def test_noise_free_simulation_follows_known_dynamics():
    system = SyntheticSystem(kind="linear-gaussian-test", d_x=2, q_var=0.0, r_var=0.0, T=5, seed=0)
    data = simulate(system)
    step = known_dynamics(system)
    previous = np.vstack([data.initial_state, data.states[:-1]])
    np.testing.assert_allclose(step(previous), data.states, atol=1e-12)
    np.testing.assert_array_equal(data.y, data.states)


def test_linear_system_is_stable():
    A = linear_gaussian_matrix(5)
    assert np.max(np.abs(np.linalg.eigvals(A))) == pytest.approx(0.9)


def test_lorenz96_drift_at_equilibrium():
    np.testing.assert_allclose(lorenz96_drift(np.full(5, 8.0)), 0.0)


def test_lorenz96_drift_formula():
    x = np.arange(5, dtype=float)
    d = 2
    expected = (x[3] - x[0]) * x[1] - x[2] + 8.0
    assert lorenz96_drift(x)[d] == pytest.approx(expected)


def test_lorenz96_drift_commutes_with_rotation():
    rng = np.random.default_rng(0)
    for shift in (1, 3, 7):
        x = rng.standard_normal(10)
        np.testing.assert_allclose(lorenz96_drift(np.roll(x, shift)), np.roll(lorenz96_drift(x), shift), atol=1e-12)


def test_system_contracts():
    with pytest.raises(ContractViolation):
        SyntheticSystem(kind="lorenz96", d_x=3)
    with pytest.raises(ContractViolation):
        SyntheticSystem(kind="kink", d_x=2)
    with pytest.raises(ContractViolation):
        SyntheticSystem(kind="van-der-pol")
    with pytest.raises(ContractViolation):
        lorenz96_drift(np.zeros(3))


def test_lorenz96_divergence_is_reported():
    with pytest.raises(SimulationException):
        simulate(SyntheticSystem(kind="lorenz96", d_x=6, dt=10.0, T=50))


def test_csv_round_trip(tmpdir):
    path = os.path.join(str(tmpdir), "data.csv")
    data = simulate(SyntheticSystem(kind="linear-gaussian-test", d_x=2, T=12))
    write_csv(data, path)
    loaded = load_csv(path)
    np.testing.assert_allclose(loaded.y, data.y)
    np.testing.assert_allclose(loaded.states, data.states)
    assert loaded.name == "data"
    assert load_csv(path, columns=["y_1"]).y.shape == (12, 1)


def test_csv_reports_bad_cell(tmpdir):
    path = os.path.join(str(tmpdir), "bad.csv")
    with open(path, "w") as f:
        f.write("a,b\n1.0,2.0\n3.0,oops\n")
    with pytest.raises(DataFormatException) as info:
        load_csv(path)
    assert info.value.row == 2 and info.value.column == "b"


def test_csv_reports_missing_column(tmpdir):
    path = os.path.join(str(tmpdir), "data.csv")
    with open(path, "w") as f:
        f.write("a\n1.0\n")
    with pytest.raises(DataFormatException):
        load_csv(path, columns=["z"])


def test_split_standardize_uses_training_statistics():
    y = np.column_stack([np.arange(10, dtype=float), np.full(10, 3.0)])
    data = split_standardize(Dataset(y=y, states=y.copy()), 0.5)
    assert data.split == 5
    np.testing.assert_allclose(data.train[:, 0].mean(), 0.0, atol=1e-12)
    np.testing.assert_allclose(data.train[:, 0].std(), 1.0)
    # a flat dimension is only centered
    np.testing.assert_allclose(data.y[:, 1], 0.0)
    np.testing.assert_allclose(data.states, data.y)
    np.testing.assert_allclose(data.inverse(data.y), y)
    assert len(data.test) == 5


def test_split_without_standardization():
    y = np.arange(9, dtype=float)
    data = split_standardize(Dataset(y=y), 0.5, standardize=False)
    assert data.split == 4
    np.testing.assert_array_equal(data.y[:, 0], y)
    with pytest.raises(ContractViolation):
        split_standardize(Dataset(y=y), 1.0)


@pytest.mark.parametrize("r_var", [0.008, 0.8])
def test_kink_observation_noise_has_the_requested_variance(r_var):
    data = simulate(SyntheticSystem(kind="kink", r_var=r_var, T=10000, seed=1))
    assert np.var(data.y - data.states, ddof=1) == pytest.approx(r_var, rel=0.05)


def test_lorenz96_without_process_noise_is_deterministic_euler():
    system = SyntheticSystem(kind="lorenz96", d_x=8, q_var=0.0, r_var=1.0, T=20, seed=0)
    data = simulate(system)
    step = known_dynamics(system)
    previous = np.vstack([data.initial_state, data.states[:-1]])
    np.testing.assert_array_equal(step(previous), data.states)
