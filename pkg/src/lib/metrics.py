"""## Filtering and forecasting metrics

Ensembles are arrays of shape `(T, N, d)` (time, member, dimension); truths are `(T, d)`.
"""
from __future__ import annotations

import numpy as np
from dataclasses import dataclass
from typing import Callable, Optional

from .autodiff import ContractViolation, no_grad
from .filtering import free_run, run_filter
from .misc.random import RandomStreams
from .models import StateSpaceModel
from .systems import Dataset


def _ensembles(ens) -> np.ndarray:
    ens = np.asarray(ens, dtype=np.float64)
    if ens.ndim == 2:
        ens = ens[:, :, None]
    if ens.ndim != 3:
        raise ContractViolation(f"ensembles must be (T, N, d), got {ens.shape}")
    if ens.shape[1] < 2:
        raise ContractViolation(f"need at least 2 members, got {ens.shape[1]}")
    return ens


def _truth(truth, shape) -> np.ndarray:
    truth = np.asarray(truth, dtype=np.float64).reshape(shape[0], -1)
    if truth.shape != (shape[0], shape[2]):
        raise ContractViolation(f"truth of shape {truth.shape} for ensembles {shape}")
    return truth


def rmse(estimates, truth) -> float:
    """Root mean squared error over all entries."""
    estimates, truth = np.asarray(estimates, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if estimates.shape != truth.shape:
        raise ContractViolation(f"shape mismatch {estimates.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((estimates - truth) ** 2)))


def spread(ensembles) -> float:
    """Root of the time-averaged mean ensemble variance (`N − 1` normalization)."""
    ens = _ensembles(ensembles)
    return float(np.sqrt(np.mean(ens.var(axis=1, ddof=1).mean(axis=1))))


def coverage(ensembles, truth, level: float = 0.95) -> float:
    """Fraction of `(t, d)` where the truth lies in the central `level` interval of the members."""
    ens = _ensembles(ensembles)
    truth = _truth(truth, ens.shape)
    tail = (1.0 - level) / 2.0
    lower, upper = np.quantile(ens, [tail, 1.0 - tail], axis=1)
    return float(np.mean((truth >= lower) & (truth <= upper)))


def crps(ensembles, truth, fair: bool = False) -> float:
    """Ensemble CRPS `E|X − y| − ½E|X − X'|`, averaged over time and dimensions.

    The pair term uses all `N²` ordered pairs, or the `N(N − 1)` distinct ones with `fair`.
    """
    ens = _ensembles(ensembles)
    truth = _truth(truth, ens.shape)
    n = ens.shape[1]
    skill = np.abs(ens - truth[:, None, :]).mean(axis=1)
    ordered = np.sort(ens, axis=1)
    weights = (2.0 * np.arange(n) - n + 1.0)[None, :, None]
    pair_sum = 2.0 * np.sum(weights * ordered, axis=1)
    pairs = n * (n - 1) if fair else n * n
    return float(np.mean(skill - 0.5 * pair_sum / pairs))


@dataclass
class FilterMetrics:
    rmse: float
    spread: float
    coverage: float
    crps: float
    rmse_per_dim: Optional[np.ndarray] = None
    crps_per_dim: Optional[np.ndarray] = None
    coverage_per_dim: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (0.0 <= self.coverage <= 1.0 and self.spread >= 0.0 and self.crps >= -1e-12):
            raise ContractViolation(f"metrics out of range: {self}")


def filter_metrics(ensembles, truth, level: float = 0.95, fair: bool = False) -> FilterMetrics:
    ens = _ensembles(ensembles)
    truth = _truth(truth, ens.shape)
    means = ens.mean(axis=1)
    dims = range(ens.shape[2])
    return FilterMetrics(
        rmse=rmse(means, truth),
        spread=spread(ens),
        coverage=coverage(ens, truth, level),
        crps=crps(ens, truth, fair),
        rmse_per_dim=np.array([rmse(means[:, d], truth[:, d]) for d in dims]),
        crps_per_dim=np.array([crps(ens[:, :, d], truth[:, d], fair) for d in dims]),
        coverage_per_dim=np.array([coverage(ens[:, :, d], truth[:, d], level) for d in dims]),
    )


def forecast_50(
    model: StateSpaceModel,
    dataset: Dataset,
    streams: RandomStreams,
    horizon: int = 50,
    stride: int = 10,
    n_ensemble: int = 200,
) -> float:
    """Rolling-origin free-run forecast RMSE in the original scale of the observations.

    The whole series is filtered once; from every test origin `τ` (every `stride` steps) the
    filtered ensemble is propagated `horizon` steps without updates and its mean emission compared
    with `y_{τ+1..τ+horizon}`.
    """
    if dataset.split is None:
        raise ContractViolation("forecasting needs a train/test split")
    if dataset.T - dataset.split < horizon + 1:
        raise ContractViolation(
            f"test split of {dataset.T - dataset.split} steps is shorter than horizon {horizon} + 1"
        )
    if stride < 1:
        raise ContractViolation("stride must be positive")

    with no_grad():
        bound = model.bind(streams)
        filtered = run_filter(model.ssm, bound, dataset.y, streams, n_ensemble, model.include_r)
        C = model.ssm.C.values
        errors = []
        for origin in range(dataset.split, dataset.T - horizon + 1, stride):
            path = free_run(model.ssm, bound, filtered.ensembles[origin], horizon, streams)
            predicted = dataset.inverse(path.mean(axis=1) @ C.T)
            observed = dataset.inverse(dataset.y[origin:origin + horizon])
            errors.append((predicted - observed) ** 2)
    return float(np.sqrt(np.mean(errors)))


# transition quality on a grid (1-d systems)


def transition_grid_rmse(predict: Callable[[np.ndarray], np.ndarray], grid, true_fn) -> float:
    grid = np.asarray(grid, dtype=np.float64).reshape(-1, 1)
    return rmse(np.ravel(predict(grid)), np.ravel(true_fn(grid)))


def best_constant_rmse(grid, true_fn) -> float:
    """RMSE of the best constant predictor, i.e. the standard deviation of `f` on the grid."""
    values = np.ravel(true_fn(np.asarray(grid, dtype=np.float64)))
    return float(np.std(values))
