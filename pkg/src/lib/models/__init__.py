"""## State-space models

A `StateSpaceModel` couples a `lib.models.base.Transition` with the emission/noise/initial-state
part `lib.filtering.SSMParameters`. Variants are registered by name in `VARIANTS`:

| variant              | transition                                | objective                   |
|----------------------|-------------------------------------------|-----------------------------|
| `etgpssm-dnn`        | shared GP + linear flows, point network   | log-lik − KL(u) − KL(x_0)   |
| `etgpssm-bnn`        | shared GP + linear flows, Bayesian network| ... − KL(w)                 |
| `gpssm-independent`  | one GP per state dimension                | log-lik − KL(u) − KL(x_0)   |
| `ad-enkf-dnn`        | neural network                            | log-lik                     |
| `ad-enkf-bnn`        | Bayesian neural network                   | log-lik − KL(w)             |
| `enkf`               | known dynamics (synthetic systems only)   | log-lik                     |
"""
from __future__ import annotations

import numpy as np
from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Optional, Tuple

from ..autodiff import ContractViolation, Tensor, no_grad
from ..filtering import SSMParameters
from ..misc.random import RandomStreams
from .base import BoundTransition, Transition
from .etgp import ETGPTransition
from .gpssm import IndependentGPTransition
from .known import KnownTransition
from .neural import NeuralTransition


@dataclass(frozen=True)
class Variant:
    name: str
    family: str
    """`etgpssm`, `gpssm-independent`, `ad-enkf` or `enkf`."""
    bayesian: bool = False

    @property
    def variational(self) -> bool:
        """Whether the objective carries the inducing and initial-state KL terms."""
        return self.family in ("etgpssm", "gpssm-independent")


VARIANTS: Dict[str, Variant] = {
    v.name: v
    for v in [
        Variant("etgpssm-dnn", "etgpssm"),
        Variant("etgpssm-bnn", "etgpssm", bayesian=True),
        Variant("gpssm-independent", "gpssm-independent"),
        Variant("ad-enkf-dnn", "ad-enkf"),
        Variant("ad-enkf-bnn", "ad-enkf", bayesian=True),
        Variant("enkf", "enkf"),
    ]
}


class StateSpaceModel:
    """Transition plus `SSMParameters`; the unit that is trained, checkpointed and evaluated."""

    variant: Variant
    transition: Transition
    ssm: SSMParameters
    include_r: bool
    """Whether the per-step likelihood covariance includes `R`."""

    def __init__(self, variant: Variant, transition: Transition, ssm: SSMParameters, include_r: bool = True) -> None:
        if transition.d_x != ssm.d_x:
            raise ContractViolation(f"transition on {transition.d_x} dims, state space has {ssm.d_x}")
        self.variant, self.transition, self.ssm, self.include_r = variant, transition, ssm, include_r

    @property
    def d_x(self) -> int:
        return self.ssm.d_x

    @property
    def d_y(self) -> int:
        return self.ssm.d_y

    def parameters(self) -> Dict[str, Tensor]:
        params = {f"transition.{k}": v for k, v in self.transition.parameters().items()}
        params.update(self.ssm.parameters("ssm"))
        return params

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: p.values.copy() for name, p in self.parameters().items()}

    def restore(self, values: Mapping[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(values)
        if missing:
            raise ContractViolation(f"missing parameters: {sorted(missing)}")
        for name, p in params.items():
            p.assign(values[name])

    def bind(self, streams: Optional[RandomStreams] = None) -> BoundTransition:
        """Draw the iteration's weights (from `streams.weights`) and bind the transition."""
        weights = self.transition.sample_weights(streams.weights if streams is not None else None)
        return self.transition.bind(weights)


def build_model(
    variant: str,
    d_x: int,
    d_y: int,
    rng: Optional[np.random.Generator] = None,
    M: int = 20,
    flow: str = "linear",
    psi: float = 1.0,
    learn_psi: bool = False,
    q_init=0.1,
    r_init=0.1,
    C: Optional[np.ndarray] = None,
    learn_c: bool = False,
    include_r: bool = True,
    known_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    shift: Optional[np.ndarray] = None,
    scale: Optional[np.ndarray] = None,
) -> StateSpaceModel:
    """Instantiate a registered variant with fresh parameters drawn from `rng`."""
    if variant not in VARIANTS:
        raise ContractViolation(f"unknown variant {variant}, expected one of {list(VARIANTS)}")
    v = VARIANTS[variant]
    rng = rng if rng is not None else np.random.default_rng(0)

    if v.family == "etgpssm":
        transition = ETGPTransition(d_x, M=M, flow=flow, bayesian=v.bayesian, rng=rng, psi=psi, learn_psi=learn_psi)
    elif v.family == "gpssm-independent":
        transition = IndependentGPTransition(d_x, M=M, rng=rng)
    elif v.family == "ad-enkf":
        transition = NeuralTransition(d_x, bayesian=v.bayesian, rng=rng, psi=psi, learn_psi=learn_psi)
    else:
        if known_fn is None:
            raise ContractViolation("the enkf variant needs the true dynamics of a synthetic system")
        transition = KnownTransition(known_fn, d_x, shift=shift, scale=scale)

    ssm = SSMParameters(d_x, d_y, C=C, q_init=q_init, r_init=r_init, learn_c=learn_c)
    return StateSpaceModel(v, transition, ssm, include_r=include_r)


def predictive_moments(
    model: StateSpaceModel, grid: np.ndarray, streams: Optional[RandomStreams] = None, samples: int = 50
) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and variance of `x_t | x_{t−1}` on `grid` (`(n, d_x)`), process noise included.

    Bayesian transitions are averaged over `samples` weight draws.
    """
    grid = np.asarray(grid, dtype=np.float64).reshape(-1, model.d_x)
    draws = samples if model.transition.bayesian else 1
    streams = streams if streams is not None else RandomStreams(0)
    means, second = [], []
    with no_grad():
        for _ in range(draws):
            mean, var = model.bind(streams).moments(Tensor(grid))
            means.append(mean)
            second.append(var + mean ** 2)
    mean = np.mean(means, axis=0)
    var = np.mean(second, axis=0) - mean ** 2
    return mean, np.maximum(var, 0.0) + model.ssm.Q.values
