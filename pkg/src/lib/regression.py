"""## Two-output warped-GP regression

A static illustration of the transition prior: two outputs of a noisy kink are fitted by

- `etgp`: one base GP warped into each output by flows whose parameters a network emits from the
  input,
- `warped`: the same base GP with input-independent flows (a stationary warped GP),
- `independent`: one GP per output.

Warped models take `flow="linear"` or `flow="sal"`; both start at the identity warp. Only the
input-dependent warp can express the oscillation of the second output with a single base GP.
"""
from __future__ import annotations

import numpy as np
import pandas as pd
from tqdm import tqdm
from typing import Dict, List, Optional, Tuple

from . import autodiff as ad
from .autodiff import Adam, ContractViolation, Tensor
from .flows import FLOWS, FlowNet, FlowParams, flow_params
from .gp import GPConditional, SparseGP, gp_predict, gp_sample, kl_inducing
from .glob import TEST_INSTANCE
from .misc.random import RandomStreams

REGRESSION_MODELS = ["etgp", "warped", "independent"]
N_OUTPUTS = 2
SAL_MOMENT_DRAWS = 256


def noisy_kink_regression(n: int = 100, seed: int = 0, low: float = -4.0, high: float = 2.0, noise: float = 0.25):
    """Inputs `x` uniform on `[low, high]` (sorted) and outputs `Y` of shape `(n, 2)`."""
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(low, high, n))
    h = 0.8 + (x + 0.2) * (1.0 - 5.0 / (1.0 + np.exp(-2.0 * x))) + noise * rng.standard_normal(n)
    y1 = 3.5 * h
    y2 = -1.5 * h + 5.0 * np.sin(np.pi * x) + 2.0 * np.cos(2.0 * np.pi * x)
    return x, np.column_stack([y1, y2])


class RegressionModel:
    kind: str
    flow: str
    gps: List[SparseGP]
    net: Optional[FlowNet]
    alpha: Optional[Tensor]
    beta: Optional[Tensor]
    gamma: Optional[Tensor]
    raw_phi: Optional[Tensor]
    """Input-independent SAL tail weight before the softplus."""
    log_noise: Tensor
    """Per-output log observation variance."""

    def __init__(self, kind: str = "etgp", M: int = 20, rng: Optional[np.random.Generator] = None,
                 low: float = -4.0, high: float = 2.0, flow: str = "linear") -> None:
        if kind not in REGRESSION_MODELS:
            raise ContractViolation(f"unknown regression model {kind}, expected one of {REGRESSION_MODELS}")
        if flow not in FLOWS:
            raise ContractViolation(f"unknown flow {flow}, expected one of {list(FLOWS)}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kind, self.flow = kind, flow
        Z = np.linspace(low, high, M)[:, None]
        count = N_OUTPUTS if kind == "independent" else 1
        self.gps = [SparseGP(1, M, rng, Z=Z) for _ in range(count)]
        self.net, self.alpha, self.beta, self.gamma, self.raw_phi = None, None, None, None, None
        if kind == "etgp":
            self.net = FlowNet(N_OUTPUTS, flow=flow, rng=rng, d_in=1)
        elif kind == "warped":
            self.alpha = Tensor(np.ones(N_OUTPUTS), requires_grad=True, name="alpha")
            self.beta = Tensor(np.zeros(N_OUTPUTS), requires_grad=True, name="beta")
            if flow == "sal":
                self.gamma = Tensor(np.zeros(N_OUTPUTS), requires_grad=True, name="gamma")
                self.raw_phi = Tensor(np.full(N_OUTPUTS, np.log(np.expm1(1.0))), requires_grad=True, name="raw_phi")
        self.log_noise = Tensor(np.zeros(N_OUTPUTS), requires_grad=True, name="log_noise")

    def parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {"log_noise": self.log_noise}
        for d, gp in enumerate(self.gps):
            params.update(gp.parameters(f"gp{d}"))
        if self.net is not None:
            params.update(self.net.parameters("net"))
        if self.alpha is not None:
            params.update({"alpha": self.alpha, "beta": self.beta})
        if self.gamma is not None:
            params.update({"gamma": self.gamma, "raw_phi": self.raw_phi})
        return params

    def _theta(self, X: Tensor) -> FlowParams:
        n = X.shape[0]
        if self.net is not None:
            return flow_params(self.net, X, self.net.mean)

        def rows(p: Tensor) -> Tensor:
            return ad.broadcast_to(ad.reshape(p, (1, N_OUTPUTS)), (n, N_OUTPUTS))

        if self.flow == "linear":
            return FlowParams(alpha=rows(self.alpha), beta=rows(self.beta))
        return FlowParams(
            alpha=rows(self.alpha), beta=rows(self.beta), gamma=rows(self.gamma), phi=rows(ad.softplus(self.raw_phi))
        )

    def draw(self, conds: List[GPConditional], x, eps: np.ndarray) -> Tensor:
        """Reparameterized draw of both outputs at `x`; `eps` is `(n, number of GPs)`."""
        X = Tensor(np.asarray(x, dtype=np.float64).reshape(-1, 1))
        if self.kind == "independent":
            return ad.stack([gp_sample(c, X, eps[:, d]) for d, c in enumerate(conds)], axis=1)
        return FLOWS[self.flow](self._theta(X), gp_sample(conds[0], X, eps[:, 0]))

    def predict(self, x) -> Tuple[np.ndarray, np.ndarray]:
        """Predictive mean and variance of both outputs (observation noise excluded).

        Exact for linear flows; SAL moments are averaged over a fixed set of base draws.
        """
        X = Tensor(np.asarray(x, dtype=np.float64).reshape(-1, 1))
        with ad.no_grad():
            pairs = [gp_predict(gp.conditional(), X) for gp in self.gps]
            if self.kind == "independent":
                return (
                    np.column_stack([m.values for m, _ in pairs]),
                    np.column_stack([v.values for _, v in pairs]),
                )
            theta = self._theta(X)
            mean, var = pairs[0]
            if self.flow == "linear":
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


def regression_elbo(model: RegressionModel, x, Y, rng: np.random.Generator, samples: int = 1) -> Tensor:
    """`E_q[log N(Y | f(x), σ²)] − KL(q(u) ‖ p(u))`, the expectation estimated with `samples` draws."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape != (len(np.ravel(x)), N_OUTPUTS):
        raise ContractViolation(f"expected targets of shape ({len(np.ravel(x))}, {N_OUTPUTS}), got {Y.shape}")
    conds = [gp.conditional() for gp in model.gps]
    noise = ad.exp(model.log_noise)
    loglik = Tensor(0.0)
    for _ in range(samples):
        F = model.draw(conds, x, rng.standard_normal((Y.shape[0], len(conds))))
        residual = ad.square(Y - F) / noise
        loglik = loglik - 0.5 * ad.sum(residual + model.log_noise + np.log(2.0 * np.pi))
    kl = Tensor(0.0)
    for c in conds:
        kl = kl + kl_inducing(c)
    return loglik / float(samples) - kl


def fit_regression(
    model: RegressionModel, x, Y, epochs: int = 2000, lr: float = 0.01, samples: int = 1, seed: int = 0
) -> Tuple[RegressionModel, pd.DataFrame]:
    streams = RandomStreams(seed)
    optimizer = Adam(model.parameters(), lr=lr)
    rows = []
    for epoch in tqdm(range(epochs), desc=f"regression {model.kind}", disable=TEST_INSTANCE):
        objective = regression_elbo(model, x, Y, streams.fork(epoch).gp, samples)
        optimizer.step(ad.backward(-objective))
        rows.append({"epoch": epoch, "elbo": objective.item()})
    return model, pd.DataFrame(rows, columns=["epoch", "elbo"])
