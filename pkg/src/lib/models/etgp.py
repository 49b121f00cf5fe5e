"""## ETGP transition

One shared sparse GP `f̃`, warped into each state dimension by a flow whose parameters the network
emits from the current state: `f_d(x) = G_{θ(x), d}(f̃(x))`.
"""
from __future__ import annotations

import numpy as np
from typing import Dict, Optional, Tuple

from .. import autodiff as ad
from ..autodiff import Tensor
from ..flows import FLOWS, FlowNet, Weights, flow_params, kl_weights
from ..gp import GPConditional, SparseGP, gp_predict, gp_sample, kl_inducing
from .base import BoundTransition, Transition

SAL_MOMENT_DRAWS = 256


class BoundETGP(BoundTransition):
    def __init__(self, transition: ETGPTransition, weights: Weights) -> None:
        self.transition = transition
        self.weights = weights
        self.cond: GPConditional = transition.gp.conditional()

    def sample(self, X, rng):
        X = ad.as_tensor(X)
        theta = flow_params(self.transition.net, X, self.weights)
        f = gp_sample(self.cond, X, rng.standard_normal(X.shape[0]))
        return FLOWS[self.transition.flow](theta, f)

    def moments(self, X) -> Tuple[np.ndarray, np.ndarray]:
        with ad.no_grad():
            X = ad.as_tensor(X)
            theta = flow_params(self.transition.net, X, self.weights)
            mean, var = gp_predict(self.cond, X)
            if self.transition.flow == "linear":
                alpha = theta.alpha.values
                return alpha * mean.values[:, None] + theta.beta.values, alpha ** 2 * var.values[:, None]
            rng = np.random.default_rng(0)
            draws = np.stack(
                [
                    FLOWS["sal"](theta, mean + ad.sqrt(var) * rng.standard_normal(X.shape[0])).values
                    for _ in range(SAL_MOMENT_DRAWS)
                ]
            )
            return draws.mean(axis=0), draws.var(axis=0)

    def kl_inducing(self) -> Tensor:
        return kl_inducing(self.cond)


class ETGPTransition(Transition):
    name = "etgpssm"

    gp: SparseGP
    net: FlowNet
    flow: str

    def __init__(
        self,
        d_x: int,
        M: int = 20,
        flow: str = "linear",
        bayesian: bool = False,
        rng: Optional[np.random.Generator] = None,
        psi: float = 1.0,
        learn_psi: bool = False,
    ) -> None:
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_x, self.flow, self.bayesian = d_x, flow, bayesian
        self.gp = SparseGP(d_x, M, rng)
        self.net = FlowNet(d_x, flow=flow, bayesian=bayesian, rng=rng, psi=psi, learn_psi=learn_psi)

    def parameters(self) -> Dict[str, Tensor]:
        params = self.gp.parameters("gp")
        params.update(self.net.parameters("net"))
        return params

    def sample_weights(self, rng=None) -> Weights:
        return self.net.sample_weights(rng)

    def kl_weights(self) -> Tensor:
        return kl_weights(self.net)

    def bind(self, weights=None) -> BoundETGP:
        return BoundETGP(self, weights if weights is not None else dict(self.net.mean))

    def parameter_counts(self) -> Dict[str, int]:
        gp = self.gp
        return {"gp": gp.Z.size + gp.m.size + gp.S_factor.size + 3, "nn": self.net.n_weights()}
