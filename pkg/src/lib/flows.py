"""## Input-dependent normalizing flows

`FlowNet` maps a state `x` to per-dimension flow parameters `θ = (α, β[, γ, φ])`; the base GP value
`f̃(x)` is then warped into every output dimension by a linear flow `α·f̃ + β` or by a
sinh-arcsinh-linear flow `α·sinh(φ·arcsinh f̃ − γ) + β`.

The network is either deterministic (point weights) or Bayesian with a mean-field Gaussian
posterior over its weights and a shared prior variance `ψ`. Weights are sampled once per
optimization iteration and shared by every time step and every ensemble member.
"""
from __future__ import annotations

import numpy as np
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from . import autodiff as ad
from .autodiff import ContractViolation, Tensor

HIDDEN = (128, 64)
FLOW_WIDTH = {"linear": 2, "sal": 4, "identity": 1}
"""Number of network outputs per state dimension."""

Weights = Dict[str, Tensor]


@dataclass
class FlowParams:
    alpha: Tensor
    """Scales, `(n, d_x)`."""
    beta: Tensor
    """Offsets, `(n, d_x)`."""
    gamma: Optional[Tensor] = None
    """SAL skew, `(n, d_x)`."""
    phi: Optional[Tensor] = None
    """SAL tail weight (positive), `(n, d_x)`."""


class FlowNet:
    """Fully-connected `d_in → 128 → 64 → width·d_out` rectifier network.

    With `flow="identity"` the head is a plain `d_out` regression output, which is how the purely
    neural transition uses it.
    """

    names: List[str]
    """Weight names in layer order, e.g. `W0, b0, W1, b1, W2, b2`."""

    def __init__(
        self,
        d_x: int,
        flow: str = "linear",
        bayesian: bool = False,
        rng: Optional[np.random.Generator] = None,
        psi: float = 1.0,
        learn_psi: bool = False,
        hidden: Tuple[int, ...] = HIDDEN,
        d_in: Optional[int] = None,
        log_sigma_init: float = -5.0,
    ) -> None:
        if flow not in FLOW_WIDTH:
            raise ContractViolation(f"unknown flow {flow}, expected one of {list(FLOW_WIDTH)}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_x, self.flow, self.bayesian = d_x, flow, bayesian
        self.d_in = d_x if d_in is None else d_in
        self.width = FLOW_WIDTH[flow]
        sizes = [self.d_in, *hidden, self.width * d_x]

        self.names = []
        self.mean: Weights = {}
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            W = rng.uniform(-bound, bound, (fan_in, fan_out))
            b = rng.uniform(-bound, bound, fan_out)
            self.mean[f"W{i}"] = Tensor(W, requires_grad=True, name=f"W{i}")
            self.mean[f"b{i}"] = Tensor(b, requires_grad=True, name=f"b{i}")
            self.names += [f"W{i}", f"b{i}"]
        self.n_layers = len(sizes) - 1

        if flow in ("linear", "sal"):
            # start at the identity warp: α = 1, φ = softplus⁻¹(1)
            last = self.mean[f"b{self.n_layers - 1}"]
            b = last.values.copy()
            b[:d_x] = 1.0
            if flow == "sal":
                b[2 * d_x:3 * d_x] = 0.0
                b[3 * d_x:] = np.log(np.expm1(1.0))
            last.assign(b)

        self.log_sigma: Weights = {}
        if bayesian:
            for name in self.names:
                self.log_sigma[name] = Tensor(
                    np.full(self.mean[name].shape, log_sigma_init), requires_grad=True, name=f"log_sigma_{name}"
                )
        self.log_psi = Tensor(np.log(psi), requires_grad=learn_psi, name="log_psi")
        self.learn_psi = learn_psi

    def parameters(self, prefix: str = "net") -> Dict[str, Tensor]:
        params = {f"{prefix}.{name}": self.mean[name] for name in self.names}
        if self.bayesian:
            params.update({f"{prefix}.log_sigma.{name}": self.log_sigma[name] for name in self.names})
            if self.learn_psi:
                params[f"{prefix}.log_psi"] = self.log_psi
        return params

    def sample_weights(self, rng: Optional[np.random.Generator] = None) -> Weights:
        """One draw `w ~ q(w)` (reparameterized); the point weights in deterministic mode."""
        if not self.bayesian:
            return dict(self.mean)
        if rng is None:
            raise ContractViolation("a Bayesian network needs a generator to sample weights")
        return {
            name: self.mean[name] + ad.exp(self.log_sigma[name]) * rng.standard_normal(self.mean[name].shape)
            for name in self.names
        }

    def forward(self, X, weights: Weights) -> Tensor:
        h = ad.as_tensor(X)
        for i in range(self.n_layers):
            h = h @ weights[f"W{i}"] + weights[f"b{i}"]
            if i < self.n_layers - 1:
                h = ad.relu(h)
        return h

    def n_weights(self) -> int:
        return int(np.sum([self.mean[name].size for name in self.names]))


def flow_params(net: FlowNet, X, weights: Weights) -> FlowParams:
    """`θ = NN_w(x)` for each row of `X`."""
    out = net.forward(X, weights)
    d = net.d_x
    if net.flow == "identity":
        return FlowParams(alpha=ad.Tensor(np.zeros(out.shape)), beta=out)
    alpha, beta = out[:, :d], out[:, d:2 * d]
    if net.flow == "linear":
        return FlowParams(alpha=alpha, beta=beta)
    return FlowParams(alpha=alpha, beta=beta, gamma=out[:, 2 * d:3 * d], phi=ad.softplus(out[:, 3 * d:]))


def _column(f, n: int) -> Tensor:
    return ad.reshape(ad.as_tensor(f), (n, 1))


def linear_flow(theta: FlowParams, f) -> Tensor:
    """`α_d·f̃ + β_d` for every dimension `d`; `f` holds one base value per row."""
    return theta.alpha * _column(f, theta.alpha.shape[0]) + theta.beta


def sal_flow(theta: FlowParams, f) -> Tensor:
    """`α_d·sinh(φ_d·arcsinh f̃ − γ_d) + β_d`."""
    if theta.gamma is None or theta.phi is None:
        raise ContractViolation("SAL flow needs γ and φ")
    u = ad.arcsinh(_column(f, theta.alpha.shape[0]))
    return theta.alpha * ad.sinh(theta.phi * u - theta.gamma) + theta.beta


def linear_flow_inverse(theta: FlowParams, y) -> np.ndarray:
    """Recover `f̃` from each output dimension, `(n, d_x)`."""
    y = ad.as_tensor(y).values
    return (y - theta.beta.values) / theta.alpha.values


def sal_flow_inverse(theta: FlowParams, y) -> np.ndarray:
    y = ad.as_tensor(y).values
    inner = np.arcsinh((y - theta.beta.values) / theta.alpha.values)
    return np.sinh((inner + theta.gamma.values) / theta.phi.values)


FLOWS = {"linear": linear_flow, "sal": sal_flow}


def kl_weights(net: FlowNet) -> Tensor:
    """`KL(q(w) ‖ N(0, ψ·I))` summed over all weights; 0 for a deterministic network."""
    if not net.bayesian:
        return Tensor(0.0)
    log_psi = net.log_psi
    total = Tensor(0.0)
    for name in net.names:
        log_sigma, mean = net.log_sigma[name], net.mean[name]
        ratio = (ad.exp(2.0 * log_sigma) + ad.square(mean)) / ad.exp(log_psi)
        total = total + 0.5 * ad.sum(ratio - 1.0 - 2.0 * log_sigma + log_psi)
    return total


def etgp_joint_cov(
    alpha_a: np.ndarray,
    alpha_b: np.ndarray,
    beta_a: np.ndarray,
    beta_b: np.ndarray,
    k_aa: float,
    k_ab: float,
    k_bb: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Joint mean and covariance of `(f(x_a), f(x_b))` under linear flows with fixed parameters.

    With `f̃` a zero-mean GP the blocks are `k(x_i, x_j)·α_i α_jᵀ`.
    """
    alpha_a, alpha_b = np.ravel(alpha_a), np.ravel(alpha_b)
    mean = np.concatenate([np.ravel(beta_a), np.ravel(beta_b)])
    cov = np.block(
        [
            [k_aa * np.outer(alpha_a, alpha_a), k_ab * np.outer(alpha_a, alpha_b)],
            [k_ab * np.outer(alpha_b, alpha_a), k_bb * np.outer(alpha_b, alpha_b)],
        ]
    )
    return mean, cov
