"""## Systems and datasets

Synthetic generators (non-stationary kink, Lorenz-96, a linear-Gaussian test system), CSV ingestion
and the split/standardization protocol. Generators are pure functions of the system description and
its seed.

CSV layout: a header row and one time step per line. Columns prefixed `x_` hold true states, all
other columns are observations.
"""
from __future__ import annotations

import numpy as np
import pandas as pd
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional

from .autodiff import ContractViolation
from .misc import atomic_write
from .misc.log import get_logger

logger = get_logger(__name__)

SYSTEM_KINDS = ["kink", "lorenz96", "linear-gaussian-test"]
KINK_NOISE_LEVELS = [0.0008, 0.008, 0.08, 0.8]


class DataFormatException(Exception):
    """A CSV cell could not be read as a number."""

    def __init__(self, path: str, row: int, column: str, value):
        super().__init__(f"{path}: non-numeric value {value!r} in row {row}, column {column}")
        self.row = row
        self.column = column


class SimulationException(Exception):
    """A generated trajectory left the finite range."""


@dataclass
class SyntheticSystem:
    kind: str = "kink"
    d_x: int = 1
    q_var: float = 0.05
    """Process-noise variance."""
    r_var: float = 0.008
    """Observation-noise variance."""
    forcing: float = 8.0
    dt: float = 0.01
    T: int = 600
    seed: int = 0
    burn_in: int = 500
    """Lorenz-96 steps discarded before recording."""
    perturbation: float = 0.01
    """Offset added to the first coordinate of the Lorenz-96 starting point `F·1`."""
    x0: float = 0.5
    """Kink starting state."""

    def __post_init__(self):
        if self.kind not in SYSTEM_KINDS:
            raise ContractViolation(f"unknown system {self.kind}, expected one of {SYSTEM_KINDS}")
        if self.q_var < 0 or self.r_var < 0 or self.dt < 0 or self.T < 0:
            raise ContractViolation("variances, step size and length must be non-negative")
        if self.kind == "kink" and self.d_x != 1:
            raise ContractViolation("the kink system is one-dimensional")
        if self.kind == "lorenz96" and self.d_x < 4:
            raise ContractViolation("Lorenz-96 needs at least 4 coupled dimensions")


@dataclass
class Dataset:
    y: np.ndarray
    """Observations `(T, d_y)`, aligned with `y_1, ..., y_T`."""
    states: Optional[np.ndarray] = None
    """True states `(T, d_x)` aligned with `y`, when known."""
    initial_state: Optional[np.ndarray] = None
    """`x_0`, when known."""
    name: str = "dataset"
    split: Optional[int] = None
    """Index of the first test step."""
    mean: Optional[np.ndarray] = None
    """Per-dimension training-split mean used for standardization."""
    std: Optional[np.ndarray] = None
    system: Optional[SyntheticSystem] = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if self.states is not None:
            self.states = np.asarray(self.states, dtype=np.float64).reshape(len(self.y), -1)
        if self.mean is None:
            self.mean = np.zeros(self.d_y)
            self.std = np.ones(self.d_y)

    @property
    def T(self) -> int:
        return len(self.y)

    @property
    def d_y(self) -> int:
        return self.y.shape[1]

    @property
    def train(self) -> np.ndarray:
        return self.y if self.split is None else self.y[: self.split]

    @property
    def test(self) -> np.ndarray:
        return self.y[0:0] if self.split is None else self.y[self.split:]

    def standardize(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values) - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        """Back to the original scale (observation dimensions, broadcast over leading axes)."""
        return np.asarray(values) * self.std + self.mean


# kink


def kink_f(x):
    """Kink nonlinearity with slope modulation and an oscillation that differ on either side of 0."""
    x = np.asarray(x, dtype=np.float64)
    kink = 0.8 + (x + 0.2) * (1.0 - 5.0 / (1.0 + np.exp(-2.0 * x)))
    positive = x > 0
    s = np.where(positive, 1.0 - 0.5 * np.exp(-0.5 * x), 1.0)
    o = np.where(positive, 0.5 * np.sin(8.0 * x), 0.5 * np.sin(2.0 * x))
    return kink * s - o


def simulate_kink(system: SyntheticSystem) -> Dataset:
    rng = np.random.default_rng(system.seed)
    x = system.x0
    states, y = np.zeros(system.T), np.zeros(system.T)
    for t in range(system.T):
        x = float(kink_f(x)) + np.sqrt(system.q_var) * rng.standard_normal()
        states[t] = x
        y[t] = x + np.sqrt(system.r_var) * rng.standard_normal()
    return Dataset(y=y, states=states, initial_state=np.array([system.x0]), name="kink", system=system)


# Lorenz-96


def lorenz96_drift(x: np.ndarray, forcing: float = 8.0) -> np.ndarray:
    """`(x_{d+1} − x_{d−2})·x_{d−1} − x_d + F` with cyclic indices, along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 4:
        raise ContractViolation(f"Lorenz-96 needs at least 4 dimensions, got {x.shape[-1]}")
    return (np.roll(x, -1, axis=-1) - np.roll(x, 2, axis=-1)) * np.roll(x, 1, axis=-1) - x + forcing


def lorenz96_step(x: np.ndarray, dt: float = 0.01, forcing: float = 8.0) -> np.ndarray:
    """One Euler step."""
    return np.asarray(x, dtype=np.float64) + dt * lorenz96_drift(x, forcing)


def simulate_lorenz96(system: SyntheticSystem) -> Dataset:
    rng = np.random.default_rng(system.seed)
    x = np.full(system.d_x, system.forcing)
    x[0] += system.perturbation
    for _ in range(system.burn_in):
        x = lorenz96_step(x, system.dt, system.forcing)
    initial = x.copy()

    states = np.zeros((system.T, system.d_x))
    for t in range(system.T):
        x = lorenz96_step(x, system.dt, system.forcing) + np.sqrt(system.q_var) * rng.standard_normal(system.d_x)
        states[t] = x
    if not np.all(np.isfinite(states)) or not np.all(np.isfinite(initial)):
        raise SimulationException(f"Lorenz-96 trajectory diverged with dt={system.dt}, try a smaller step")
    y = states + np.sqrt(system.r_var) * rng.standard_normal(states.shape)
    return Dataset(y=y, states=states, initial_state=initial, name=f"lorenz96-{system.d_x}", system=system)


# linear-Gaussian test system


def linear_gaussian_matrix(d_x: int, rate: float = 0.9, angle: float = 0.1) -> np.ndarray:
    """`rate` times a block-diagonal of planar rotations by `angle` (a trailing 1×1 block is 1)."""
    A = np.eye(d_x)
    c, s = np.cos(angle), np.sin(angle)
    for i in range(0, d_x - 1, 2):
        A[i:i + 2, i:i + 2] = [[c, -s], [s, c]]
    return rate * A


def simulate_linear_gaussian(system: SyntheticSystem) -> Dataset:
    rng = np.random.default_rng(system.seed)
    A = linear_gaussian_matrix(system.d_x)
    x = rng.standard_normal(system.d_x)
    initial = x.copy()
    states = np.zeros((system.T, system.d_x))
    for t in range(system.T):
        x = A @ x + np.sqrt(system.q_var) * rng.standard_normal(system.d_x)
        states[t] = x
    y = states + np.sqrt(system.r_var) * rng.standard_normal(states.shape)
    return Dataset(y=y, states=states, initial_state=initial, name=f"linear-{system.d_x}", system=system)


SIMULATORS: Dict[str, Callable[[SyntheticSystem], Dataset]] = {
    "kink": simulate_kink,
    "lorenz96": simulate_lorenz96,
    "linear-gaussian-test": simulate_linear_gaussian,
}


def simulate(system: SyntheticSystem) -> Dataset:
    return SIMULATORS[system.kind](system)


def known_dynamics(system: SyntheticSystem) -> Callable[[np.ndarray], np.ndarray]:
    """Noise-free transition of a synthetic system, applied row-wise to `(N, d_x)` arrays."""
    if system.kind == "kink":
        return kink_f
    if system.kind == "lorenz96":
        return lambda X: lorenz96_step(X, system.dt, system.forcing)
    A = linear_gaussian_matrix(system.d_x)
    return lambda X: np.asarray(X) @ A.T


# CSV


def load_csv(path: str, columns: Optional[List[str]] = None) -> Dataset:
    """Read observations (and `x_` state columns if any); `columns` restricts the observations."""
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    state_cols = [c for c in frame.columns if c.startswith("x_")]
    obs_cols = columns if columns is not None else [c for c in frame.columns if not c.startswith("x_")]
    missing = [c for c in obs_cols if c not in frame.columns]
    if missing:
        raise DataFormatException(path, 0, missing[0], "<missing column>")
    if not obs_cols:
        raise DataFormatException(path, 0, "<header>", "<no observation columns>")

    numeric = {}
    for col in obs_cols + state_cols:
        values = pd.to_numeric(frame[col].str.strip(), errors="coerce")
        bad = values.isna()
        if bad.any():
            row = int(np.argmax(bad.to_numpy()))
            raise DataFormatException(path, row + 1, col, frame[col].iloc[row])
        numeric[col] = values.to_numpy(dtype=np.float64)

    y = np.column_stack([numeric[c] for c in obs_cols]) if len(frame) else np.zeros((0, len(obs_cols)))
    states = np.column_stack([numeric[c] for c in state_cols]) if state_cols and len(frame) else None
    name = str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return Dataset(y=y, states=states, name=name)


def write_csv(dataset: Dataset, path: str) -> None:
    """Same layout `load_csv` reads: `y_<d>` observation columns then `x_<d>` state columns."""
    frame = pd.DataFrame(dataset.y, columns=[f"y_{d}" for d in range(dataset.d_y)])
    if dataset.states is not None:
        for d in range(dataset.states.shape[1]):
            frame[f"x_{d}"] = dataset.states[:, d]
    with atomic_write(path) as f:
        frame.to_csv(f, index=False)


# split and standardization


def split_standardize(dataset: Dataset, fraction: float = 0.5, standardize: bool = True) -> Dataset:
    """Split at `fraction` and z-score every observation dimension with training-split statistics.

    A dimension whose training-split std is zero is only centered. True states are transformed with
    the same statistics when they live in the observation space.
    """
    if not 0.0 < fraction < 1.0:
        raise ContractViolation(f"split fraction must be in (0, 1), got {fraction}")
    split = int(np.floor(dataset.T * fraction))
    if split < 1:
        raise ContractViolation(f"training split of a length-{dataset.T} series is empty")

    train = dataset.y[:split]
    if standardize:
        mean = train.mean(axis=0)
        std = train.std(axis=0)
        flat = std == 0.0
        if np.any(flat):
            logger.warning("zero training std in dimensions %s, left unscaled", np.flatnonzero(flat).tolist())
            std = np.where(flat, 1.0, std)
    else:
        mean, std = np.zeros(dataset.d_y), np.ones(dataset.d_y)

    states, initial = dataset.states, dataset.initial_state
    if states is not None and states.shape[1] == dataset.d_y:
        states = (states - mean) / std
        if initial is not None:
            initial = (np.asarray(initial) - mean) / std
    return replace(
        dataset,
        y=(dataset.y - mean) / std,
        states=states,
        initial_state=initial,
        split=split,
        mean=mean,
        std=std,
    )
