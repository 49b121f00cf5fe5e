"""## EnsembleGP management class

Entrypoint of the library: registries of model variants and data sources, and the `run`/`sweep`
orchestration that turns an `lib.experiment.ExperimentConfig` into artifacts on disk.

Example:
```
from lib.egp import EnsembleGP
from lib.experiment import load_experiment

egp = EnsembleGP()
manifest = egp.run(load_experiment("configs/kink_dnn.toml"))
print(manifest.output_dir, manifest.artifacts)
```

A run directory holds:

| artifact        | file               | content                                                        |
|-----------------|--------------------|----------------------------------------------------------------|
| `checkpoint`    | `checkpoint.npz`   | named parameters, config hash, variant                         |
| `elbo_trace`    | `elbo_trace.csv`   | per-epoch ELBO and its parts                                   |
| `metrics`       | `metrics.csv`      | one row: rmse, spread, coverage, crps, forecast_rmse, ...      |
| `config`        | `config.json`      | the resolved configuration                                     |
| `filtered`      | `filtered.csv`     | per step: true state, ensemble mean and 95% band               |
| `transition`    | `transition.csv`   | learned transition on a grid (one-dimensional states only)     |
| `manifest`      | `manifest.json`    | everything above, with timestamps                              |
"""
from __future__ import annotations

import os, time
import jsonpickle
import numpy as np
import pandas as pd
from dataclasses import replace
from datetime import datetime
from joblib import Parallel, delayed
from sklearn.model_selection import ParameterGrid
from tqdm import tqdm
from typing import Callable, Dict, List, Optional, Tuple

from .autodiff import no_grad
from .config import config
from .experiment import ExperimentConfig, RunManifest, config_dict, config_hash, with_overrides
from .filtering import run_filter
from .glob import TEST_INSTANCE
from .metrics import best_constant_rmse, filter_metrics, forecast_50, rmse, transition_grid_rmse
from .misc import atomic_write, ensuredir
from .misc.log import get_logger
from .misc.random import RandomStreams
from .models import VARIANTS, StateSpaceModel, Variant, build_model, predictive_moments
from .models.known import KnownTransition
from .systems import SIMULATORS, Dataset, SyntheticSystem, known_dynamics, load_csv, split_standardize
from .training import TrainConfig, save_checkpoint, train

logger = get_logger(__name__)

METRIC_COLUMNS = [
    "variant",
    "dataset",
    "seed",
    "rmse",
    "spread",
    "coverage",
    "crps",
    "forecast_rmse",
    "obs_rmse",
    "transition_rmse",
    "constant_rmse",
    "best_epoch",
    "wall_time",
    "config_hash",
]
SCORES = ["rmse", "spread", "coverage", "crps", "forecast_rmse", "obs_rmse", "transition_rmse", "wall_time"]


class EnsembleGP:
    """EnsembleGP main class: builds datasets and models from a configuration and runs experiments."""

    variants: Dict[str, Variant]
    """Model variants, by name."""
    systems: Dict[str, Callable[[SyntheticSystem], Dataset]]
    """Synthetic data generators, by kind."""
    output_path: str
    """Root of the run directories."""

    def __init__(self, output_path: Optional[str] = None) -> None:
        self.variants = dict(VARIANTS)
        self.systems = dict(SIMULATORS)
        self.output_path = output_path or config.OUTPUT_PATH or "runs"

    def synthetic_system(self, cfg: ExperimentConfig) -> Optional[SyntheticSystem]:
        s = cfg.system
        if s.kind == "csv":
            return None
        return SyntheticSystem(
            kind=s.kind, d_x=s.d_x, q_var=s.q_var, r_var=s.r_var, forcing=s.forcing, dt=s.dt, T=s.T, seed=cfg.run.seed
        )

    def build_dataset(self, cfg: ExperimentConfig) -> Dataset:
        """Simulate or read the data, then split and standardize it."""
        cfg = cfg.resolved()
        system = self.synthetic_system(cfg)
        if system is None:
            if not os.path.exists(cfg.system.path):
                raise FileNotFoundError(cfg.system.path)
            dataset = load_csv(cfg.system.path, cfg.system.columns)
        else:
            dataset = self.systems[system.kind](system)
        return split_standardize(dataset, cfg.data.split, cfg.data.standardize)

    def build_model(self, cfg: ExperimentConfig, dataset: Dataset, rng: np.random.Generator) -> StateSpaceModel:
        cfg = cfg.resolved()
        m = cfg.model
        d_x = dataset.system.d_x if dataset.system is not None else (cfg.system.d_x or dataset.d_y)
        known_fn, shift, scale = None, None, None
        if m.variant == "enkf":
            known_fn = known_dynamics(dataset.system)
            if d_x == dataset.d_y:
                shift, scale = dataset.mean, dataset.std
        r_init = m.r_init * np.maximum(dataset.train.var(axis=0), 1e-6)
        return build_model(
            m.variant,
            d_x,
            dataset.d_y,
            rng=rng,
            M=m.M,
            flow=m.flow,
            psi=m.psi,
            learn_psi=m.learn_psi,
            q_init=m.q_init,
            r_init=r_init,
            learn_c=m.learn_c,
            include_r=m.include_r,
            known_fn=known_fn,
            shift=shift,
            scale=scale,
        )

    def run_directory(self, cfg: ExperimentConfig) -> str:
        if cfg.run.output:
            return cfg.run.output
        name = f"{cfg.run.name}-{cfg.model.variant}-{config_hash(cfg)}-s{cfg.run.seed}"
        return os.path.join(self.output_path, name)

    def run(self, cfg: ExperimentConfig) -> RunManifest:
        """Train and evaluate one configuration; every artifact is written atomically."""
        cfg = cfg.resolved()
        digest = config_hash(cfg)
        out = self.run_directory(cfg)
        ensuredir(out)
        started = time.perf_counter()
        manifest = RunManifest(
            config_hash=digest,
            seed=cfg.run.seed,
            variant=cfg.model.variant,
            dataset="",
            output_dir=out,
            started=datetime.now().isoformat(timespec="seconds"),
        )

        streams = RandomStreams(cfg.run.seed)
        dataset = self.build_dataset(cfg)
        manifest.dataset = dataset.name
        model = self.build_model(cfg, dataset, streams.init)
        logger.info("run %s: %s on %s (T=%d, d_x=%d)", digest, model.variant.name, dataset.name, dataset.T, model.d_x)

        t = cfg.train
        train_config = TrainConfig(
            epochs=t.epochs,
            lr=t.lr,
            n_ensemble=t.n_ensemble,
            patience=t.patience,
            window=t.window,
            mc_samples=t.mc_samples,
            seed=cfg.run.seed,
            variant=cfg.model.variant,
        )
        result = train(model, dataset.train, train_config, streams)

        # evaluation draws from streams no training epoch uses
        eval_streams = streams.fork(t.epochs + 1)
        row, filtered = self.evaluate(cfg, model, dataset, eval_streams)
        row.update(best_epoch=result.best_epoch, wall_time=time.perf_counter() - started, config_hash=digest)

        artifacts = {}
        artifacts["checkpoint"] = "checkpoint.npz"
        save_checkpoint(os.path.join(out, artifacts["checkpoint"]), model, digest)
        artifacts["elbo_trace"] = "elbo_trace.csv"
        self._write_frame(result.trace, out, artifacts["elbo_trace"])
        artifacts["metrics"] = "metrics.csv"
        self._write_frame(pd.DataFrame([row], columns=METRIC_COLUMNS), out, artifacts["metrics"])
        artifacts["config"] = "config.json"
        with atomic_write(os.path.join(out, artifacts["config"])) as f:
            f.write(jsonpickle.encode(config_dict(cfg), unpicklable=False, indent=2))
        artifacts["filtered"] = "filtered.csv"
        self._write_frame(filtered, out, artifacts["filtered"])
        if model.d_x == 1:
            artifacts["transition"] = "transition.csv"
            self._write_frame(self.transition_frame(cfg, model, dataset, eval_streams), out, artifacts["transition"])

        manifest.artifacts = artifacts
        manifest.finished = datetime.now().isoformat(timespec="seconds")
        manifest.wall_time = row["wall_time"]
        manifest.status = "done"
        with atomic_write(os.path.join(out, "manifest.json")) as f:
            f.write(manifest.to_json())
        return manifest

    def evaluate(
        self, cfg: ExperimentConfig, model: StateSpaceModel, dataset: Dataset, streams: RandomStreams
    ) -> Tuple[Dict, pd.DataFrame]:
        """Filter the whole series with the trained model and score it.

        Scores are computed in the original scale when states live in the observation space. Without
        true states the ensemble is scored against the observations through the emission matrix.
        """
        e = cfg.eval
        with no_grad():
            bound = model.bind(streams)
            result = run_filter(model.ssm, bound, dataset.y, streams, e.n_ensemble, model.include_r)
        ensembles = result.members[1:]

        same_space = model.d_x == dataset.d_y
        if dataset.states is not None:
            truth = dataset.states
        else:
            ensembles = ensembles @ model.ssm.C.values.T
            truth, same_space = dataset.y, True
        if same_space:
            ensembles, truth = dataset.inverse(ensembles), dataset.inverse(truth)
        observations = dataset.inverse(dataset.y)

        metrics = filter_metrics(ensembles, truth, e.level, e.fair_crps)
        forecast = np.nan
        if e.forecast and dataset.T - dataset.split >= e.horizon + 1:
            forecast = forecast_50(model, dataset, streams.sample(1), e.horizon, e.stride, e.n_ensemble)
        elif e.forecast:
            logger.warning("test split of %d steps is too short for %d-step forecasts", dataset.T - dataset.split, e.horizon)

        obs_rmse = rmse(observations, truth) if truth.shape == observations.shape else np.nan
        transition_rmse, constant_rmse = self.transition_scores(cfg, model, dataset, streams)
        row = {
            "variant": model.variant.name,
            "dataset": dataset.name,
            "seed": cfg.run.seed,
            "rmse": metrics.rmse,
            "spread": metrics.spread,
            "coverage": metrics.coverage,
            "crps": metrics.crps,
            "forecast_rmse": forecast,
            "obs_rmse": obs_rmse,
            "transition_rmse": transition_rmse,
            "constant_rmse": constant_rmse,
        }
        return row, self.filtered_frame(ensembles, truth if dataset.states is not None else None)

    @staticmethod
    def filtered_frame(ensembles: np.ndarray, truth: Optional[np.ndarray], level: float = 0.95) -> pd.DataFrame:
        T, _, d = ensembles.shape
        tail = (1.0 - level) / 2.0
        lower, upper = np.quantile(ensembles, [tail, 1.0 - tail], axis=1)
        mean = ensembles.mean(axis=1)
        frame = pd.DataFrame({"t": np.arange(1, T + 1)})
        for k in range(d):
            if truth is not None:
                frame[f"true_{k}"] = truth[:, k]
            frame[f"mean_{k}"] = mean[:, k]
            frame[f"lower_{k}"] = lower[:, k]
            frame[f"upper_{k}"] = upper[:, k]
        return frame

    def _grid(self, cfg: ExperimentConfig, dataset: Dataset) -> np.ndarray:
        """Transition grid in model scale, over the range the states visit."""
        if cfg.system.kind == "kink":
            low, high = -3.0, 1.5
            return (np.linspace(low, high, cfg.eval.grid_points) - dataset.mean[0]) / dataset.std[0]
        values = dataset.states if dataset.states is not None else dataset.y
        return np.linspace(values.min(), values.max(), cfg.eval.grid_points)

    def _true_transition(self, model: StateSpaceModel, dataset: Dataset) -> Optional[Callable]:
        if dataset.system is None or model.d_x != 1:
            return None
        known = KnownTransition(known_dynamics(dataset.system), 1, shift=dataset.mean, scale=dataset.std)
        return known.apply

    def transition_scores(
        self, cfg: ExperimentConfig, model: StateSpaceModel, dataset: Dataset, streams: RandomStreams
    ) -> Tuple[float, float]:
        """Grid RMSE of the learned mean transition and of the best constant, for one-dimensional systems."""
        true_fn = self._true_transition(model, dataset)
        if true_fn is None:
            return np.nan, np.nan
        grid = self._grid(cfg, dataset).reshape(-1, 1)

        def predict(X):
            return predictive_moments(model, X, streams)[0]

        return transition_grid_rmse(predict, grid, true_fn), best_constant_rmse(grid, true_fn)

    def transition_frame(
        self, cfg: ExperimentConfig, model: StateSpaceModel, dataset: Dataset, streams: RandomStreams
    ) -> pd.DataFrame:
        """Learned mean and `±2σ` band (process noise included) on a grid, in the original scale."""
        grid = self._grid(cfg, dataset).reshape(-1, 1)
        mean, var = predictive_moments(model, grid, streams)
        scale, shift = dataset.std[0], dataset.mean[0]
        frame = pd.DataFrame(
            {
                "x": grid[:, 0] * scale + shift,
                "mean": mean[:, 0] * scale + shift,
                "lower": (mean[:, 0] - 2.0 * np.sqrt(var[:, 0])) * scale + shift,
                "upper": (mean[:, 0] + 2.0 * np.sqrt(var[:, 0])) * scale + shift,
            }
        )
        true_fn = self._true_transition(model, dataset)
        if true_fn is not None:
            frame["true"] = np.ravel(true_fn(grid)) * scale + shift
        return frame

    @staticmethod
    def _write_frame(frame: pd.DataFrame, directory: str, name: str) -> None:
        with atomic_write(os.path.join(directory, name)) as f:
            frame.to_csv(f, index=False)

    def grid_points(self, cfg: ExperimentConfig) -> List[Dict]:
        """Cartesian product of the `[grid]` values; a single empty point without a grid."""
        return list(ParameterGrid(cfg.grid)) if cfg.grid else [{}]

    def sweep(self, cfg: ExperimentConfig, n_jobs: Optional[int] = None, output: Optional[str] = None) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """One run per grid point; failures are recorded and the sweep goes on.

        Returns the per-run table (with `status` and `error` columns) and the aggregate: mean and
        std of every score per grid cell, seeds pooled. Both are also written next to the runs.
        """
        n_jobs = n_jobs or config.N_JOBS
        points = self.grid_points(cfg)
        base = replace(cfg, grid={})
        root = output or os.path.join(self.output_path, f"{cfg.run.name}-sweep-{config_hash(cfg)}")
        ensuredir(root)
        jobs = []
        for i, point in enumerate(points):
            point_cfg = with_overrides(base, point)
            point_cfg = with_overrides(point_cfg, {"run.output": os.path.join(root, f"point-{i:03d}")})
            jobs.append((point, point_cfg))
        logger.info("sweep over %d points with %d jobs", len(jobs), n_jobs)

        rows = Parallel(n_jobs=n_jobs)(
            delayed(_run_point)(self.output_path, point, point_cfg)
            for point, point_cfg in tqdm(jobs, desc="sweep", disable=TEST_INSTANCE)
        )
        runs = pd.DataFrame(rows)
        keys = sorted({k for point in points for k in point if k != "run.seed"})
        aggregate = aggregate_runs(runs, keys)
        self._write_frame(runs, root, "runs.csv")
        self._write_frame(aggregate, root, "aggregate.csv")
        failed = int((runs["status"] != "done").sum())
        if failed:
            logger.error("%d of %d sweep points failed", failed, len(runs))
        return runs, aggregate


def _run_point(output_path: str, point: Dict, cfg: ExperimentConfig) -> Dict:
    row = {**point, "status": "done", "error": "", "output_dir": cfg.run.output}
    try:
        manifest = EnsembleGP(output_path).run(cfg)
        metrics = pd.read_csv(os.path.join(manifest.output_dir, manifest.artifacts["metrics"]), dtype={"config_hash": str})
        row.update(metrics.iloc[0].to_dict())
    except Exception as e:
        logger.error("sweep point %s failed: %s", point, e)
        row.update(status="failed", error=f"{type(e).__name__}: {e}")
    return row


def aggregate_runs(runs: pd.DataFrame, keys: List[str]) -> pd.DataFrame:
    """Mean and std (`<score>_mean`, `<score>_std`) of the successful runs of each grid cell."""
    done = runs[runs["status"] == "done"]
    scores = [c for c in SCORES if c in done.columns]
    if done.empty or not scores:
        return pd.DataFrame(columns=keys + ["runs"])
    grouped = done.groupby(keys, dropna=False) if keys else done.groupby(lambda _: 0)
    table = grouped[scores].agg(["mean", "std"])
    table.columns = [f"{score}_{stat}" for score, stat in table.columns]
    table.insert(0, "runs", grouped.size())
    return table.reset_index(drop=not keys)
