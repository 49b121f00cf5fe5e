"""## Neural transition

`f(x) = NN_w(x)` with the same `d_x → 128 → 64` rectifier body as the flow network and a plain
`d_x` output, deterministic or Bayesian. Trained on the filter log-likelihood alone.
"""
from __future__ import annotations

import numpy as np
from typing import Dict, Optional, Tuple

from .. import autodiff as ad
from ..autodiff import Tensor
from ..flows import FlowNet, Weights, kl_weights
from .base import BoundTransition, Transition


class BoundNeural(BoundTransition):
    def __init__(self, net: FlowNet, weights: Weights) -> None:
        self.net, self.weights = net, weights

    def sample(self, X, rng):
        return self.net.forward(X, self.weights)

    def moments(self, X) -> Tuple[np.ndarray, np.ndarray]:
        with ad.no_grad():
            mean = self.net.forward(X, self.weights).values
        return mean, np.zeros_like(mean)


class NeuralTransition(Transition):
    name = "ad-enkf"

    net: FlowNet

    def __init__(
        self,
        d_x: int,
        bayesian: bool = False,
        rng: Optional[np.random.Generator] = None,
        psi: float = 1.0,
        learn_psi: bool = False,
    ) -> None:
        self.d_x, self.bayesian = d_x, bayesian
        self.net = FlowNet(d_x, flow="identity", bayesian=bayesian, rng=rng, psi=psi, learn_psi=learn_psi)

    def parameters(self) -> Dict[str, Tensor]:
        return self.net.parameters("net")

    def sample_weights(self, rng=None) -> Weights:
        return self.net.sample_weights(rng)

    def kl_weights(self) -> Tensor:
        return kl_weights(self.net)

    def bind(self, weights=None) -> BoundNeural:
        return BoundNeural(self.net, weights if weights is not None else dict(self.net.mean))

    def parameter_counts(self) -> Dict[str, int]:
        return {"gp": 0, "nn": self.net.n_weights()}
