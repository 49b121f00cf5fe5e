"""## Variational training

The objective is the marginalized ELBO
```
L = Σ_t log p(y_t | y_{1:t−1}) − KL(q(u)‖p(u)) − KL(q(w)‖p(w)) − KL(q(x_0)‖p(x_0))
```
where the sum is the ensemble-filter log-likelihood of one reparameterized draw of the weights, the
GP function values and all filter noises. It is maximized jointly over every model and variational
parameter with Adam, with early stopping on a smoothed ELBO.
"""
from __future__ import annotations

import numpy as np
import pandas as pd
from dataclasses import dataclass, field
from tqdm import tqdm
from typing import Dict, List, Optional, Tuple

from . import autodiff as ad
from .autodiff import Adam, ContractViolation, DecompositionException, Tensor
from .filtering import FilterDivergenceException, FilterResult, run_filter
from .glob import TEST_INSTANCE
from .misc import atomic_write
from .misc.log import get_logger
from .misc.random import RandomStreams
from .models import VARIANTS, StateSpaceModel

logger = get_logger(__name__)

MAX_CONSECUTIVE_SKIPS = 3


class TrainingDivergedException(Exception):
    """The ELBO stayed non-finite for too many consecutive iterations."""


@dataclass
class ELBOReport:
    total: float
    loglik: float
    kl_u: float
    kl_w: float
    kl_x0: float
    iteration: int = 0
    objective: Optional[Tensor] = field(default=None, repr=False, compare=False)
    """`total` as a graph node, for differentiation."""
    filtered: Optional[FilterResult] = field(default=None, repr=False, compare=False)

    def as_row(self) -> Dict[str, float]:
        return {
            "epoch": self.iteration,
            "elbo": self.total,
            "loglik": self.loglik,
            "kl_u": self.kl_u,
            "kl_w": self.kl_w,
            "kl_x0": self.kl_x0,
        }


@dataclass
class TrainConfig:
    epochs: int = 1000
    lr: float = 0.005
    n_ensemble: int = 200
    patience: int = 50
    window: int = 10
    """Smoothing window of the early-stopping criterion."""
    mc_samples: int = 1
    """Independent draws averaged in the log-likelihood term."""
    seed: int = 0
    variant: str = "etgpssm-dnn"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractViolation(f"unknown variant {self.variant}")
        for name in ("epochs", "n_ensemble", "patience", "window", "mc_samples"):
            if getattr(self, name) < (0 if name == "epochs" else 1):
                raise ContractViolation(f"{name} must be positive")
        if self.n_ensemble < 2:
            raise ContractViolation("ensemble size must be at least 2")
        if self.lr < 0:
            raise ContractViolation("learning rate must be non-negative")


def kl_x0(m0, L0) -> Tensor:
    """`KL(N(m_0, L_0 L_0ᵀ) ‖ N(0, I))`."""
    m0, L0 = ad.as_tensor(m0), ad.as_tensor(L0)
    d = m0.shape[0]
    trace = ad.sum(ad.square(L0))
    logdet = ad.sum(ad.log(ad.square(ad.diagonal(L0))))
    return 0.5 * (trace + ad.sum(ad.square(m0)) - d - logdet)


def elbo(
    model: StateSpaceModel,
    y: np.ndarray,
    streams: RandomStreams,
    n_ensemble: int = 200,
    mc_samples: int = 1,
    iteration: int = 0,
) -> ELBOReport:
    """Single-draw (or `mc_samples`-draw) estimate of the ELBO, with its parts."""
    kl_w = model.transition.kl_weights()
    kl_u: Tensor = Tensor(0.0)
    kl_x = Tensor(0.0)
    if model.variant.variational:
        kl_x = kl_x0(model.ssm.m0, model.ssm.L0)

    loglik: Tensor = Tensor(0.0)
    filtered = None
    for s in range(mc_samples):
        draw = streams if s == 0 else streams.sample(s)
        bound = model.bind(draw)
        if s == 0 and model.variant.variational:
            kl_u = bound.kl_inducing()
        filtered = run_filter(model.ssm, bound, y, draw, n_ensemble=n_ensemble, include_r=model.include_r)
        loglik = loglik + filtered.loglik
    if mc_samples > 1:
        loglik = loglik / float(mc_samples)

    objective = ((loglik - kl_u) - kl_w) - kl_x
    return ELBOReport(
        total=objective.item(),
        loglik=loglik.item(),
        kl_u=kl_u.item(),
        kl_w=kl_w.item(),
        kl_x0=kl_x.item(),
        iteration=iteration,
        objective=objective,
        filtered=filtered,
    )


def adenkf_objective(model: StateSpaceModel, y: np.ndarray, streams: RandomStreams, n_ensemble: int = 200) -> ELBOReport:
    """Filter log-likelihood of a neural transition, minus the weight KL in Bayesian mode."""
    if model.variant.family != "ad-enkf":
        raise ContractViolation(f"{model.variant.name} is not a neural variant")
    return elbo(model, y, streams, n_ensemble=n_ensemble)


@dataclass
class TrainResult:
    trace: pd.DataFrame
    """One row per epoch: elbo, its parts, smoothed elbo, skipped flag."""
    best_epoch: int
    best_smoothed: float
    epochs_run: int
    stopped_early: bool


def train(model: StateSpaceModel, y: np.ndarray, config: TrainConfig, streams: Optional[RandomStreams] = None) -> TrainResult:
    """Maximize the ELBO with Adam; the parameters with the best smoothed ELBO are restored at the end."""
    streams = streams if streams is not None else RandomStreams(config.seed)
    params = model.parameters()
    optimizer = Adam(params, lr=config.lr)

    rows: List[Dict] = []
    recent: List[float] = []
    best_smoothed, best_epoch = -np.inf, -1
    best = model.snapshot()
    consecutive = 0
    stopped = False

    for epoch in tqdm(range(config.epochs), desc=model.variant.name, disable=TEST_INSTANCE):
        try:
            report = elbo(model, y, streams.fork(epoch), config.n_ensemble, config.mc_samples, epoch)
            finite = np.isfinite(report.total)
        except (FilterDivergenceException, DecompositionException) as e:
            logger.warning("epoch %d: %s", epoch, e)
            report, finite = None, False

        if not finite:
            consecutive += 1
            rows.append({"epoch": epoch, "elbo": np.nan, "smoothed": np.nan, "skipped": True})
            if consecutive >= MAX_CONSECUTIVE_SKIPS:
                raise TrainingDivergedException(
                    f"ELBO non-finite for {consecutive} consecutive epochs (last epoch {epoch})"
                )
            continue
        consecutive = 0

        recent.append(report.total)
        smoothed = float(np.mean(recent[-config.window:]))
        if smoothed > best_smoothed:
            best_smoothed, best_epoch = smoothed, epoch
            best = model.snapshot()

        grads = ad.backward(-report.objective)
        applied = optimizer.step(grads)
        rows.append({**report.as_row(), "smoothed": smoothed, "skipped": not applied})

        if epoch - best_epoch >= config.patience:
            logger.info("early stop at epoch %d (best smoothed ELBO %.4f at %d)", epoch, best_smoothed, best_epoch)
            stopped = True
            break

    model.restore(best)
    trace = pd.DataFrame(rows, columns=["epoch", "elbo", "loglik", "kl_u", "kl_w", "kl_x0", "smoothed", "skipped"])
    return TrainResult(
        trace=trace, best_epoch=best_epoch, best_smoothed=best_smoothed, epochs_run=len(rows), stopped_early=stopped
    )


# checkpoints

CONFIG_HASH_KEY = "__config_hash__"
VARIANT_KEY = "__variant__"


def save_checkpoint(path: str, model: StateSpaceModel, config_hash: str = "") -> None:
    """Flat `name -> array` npz of all parameters plus the config hash and variant."""
    arrays = model.snapshot()
    arrays[CONFIG_HASH_KEY] = np.array(config_hash)
    arrays[VARIANT_KEY] = np.array(model.variant.name)
    with atomic_write(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path: str) -> Tuple[Dict[str, np.ndarray], str, str]:
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    config_hash = str(arrays.pop(CONFIG_HASH_KEY, ""))
    variant = str(arrays.pop(VARIANT_KEY, ""))
    return arrays, config_hash, variant
