"""## Ensemble Kalman filtering

State-space model wiring (linear emission `C`, diagonal process and observation noise, Gaussian
`q(x_0)`) and a stochastic-perturbation ensemble Kalman filter whose every step is recorded on the
autodiff graph, so the accumulated log-likelihood can be differentiated with respect to the
transition, the noise levels and `q(x_0)`.

A transition is any callable `step(X, rng) -> Tensor` mapping an `(N, d_x)` ensemble to draws of
`f(x)` (process noise excluded); see `lib.models.Transition.bind`.
"""
from __future__ import annotations

import numpy as np
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from .. import autodiff as ad
from ..autodiff import ContractViolation, Tensor
from ..misc.random import RandomStreams
from .kalman import KalmanResult, exact_kalman_filter

LOG_2PI = float(np.log(2.0 * np.pi))

Step = Callable[[Tensor, np.random.Generator], Tensor]


class FilterDivergenceException(Exception):
    """A member of the ensemble became non-finite."""

    def __init__(self, step: int, member: int, reason: str = "non-finite state"):
        super().__init__(f"filter diverged at step {step}, member {member}: {reason}")
        self.step = step
        self.member = member


def selector(d_y: int, d_x: int) -> np.ndarray:
    """`[I_{d_y} | 0]`."""
    if d_y > d_x:
        raise ContractViolation(f"cannot observe {d_y} dimensions of a {d_x}-dimensional state")
    return np.eye(d_y, d_x)


class SSMParameters:
    """Emission, noise levels and initial-state posterior of the state-space model."""

    log_q: Tensor
    """Process-noise log-variances, `(d_x,)`."""
    log_r: Tensor
    """Observation-noise log-variances, `(d_y,)`."""
    C: Tensor
    """Emission matrix `(d_y, d_x)`, fixed unless `learn_c`."""
    m0: Tensor
    L0_free: Tensor
    """Free matrix whose lower triangle is the factor `L_0` of `q(x_0)`."""

    def __init__(
        self,
        d_x: int,
        d_y: int,
        C: Optional[np.ndarray] = None,
        q_init=0.1,
        r_init=0.1,
        learn_c: bool = False,
        learn_noise: bool = True,
    ) -> None:
        self.d_x, self.d_y = d_x, d_y
        C = selector(d_y, d_x) if C is None else np.asarray(C, dtype=np.float64)
        if C.shape != (d_y, d_x):
            raise ContractViolation(f"emission matrix must be {(d_y, d_x)}, got {C.shape}")
        q = np.broadcast_to(np.asarray(q_init, dtype=np.float64), (d_x,))
        r = np.broadcast_to(np.asarray(r_init, dtype=np.float64), (d_y,))
        if np.any(q <= 0) or np.any(r <= 0):
            raise ContractViolation("noise variances must be positive")
        self.C = Tensor(C, requires_grad=learn_c, name="C")
        self.log_q = Tensor(np.log(q), requires_grad=learn_noise, name="log_q")
        self.log_r = Tensor(np.log(r), requires_grad=learn_noise, name="log_r")
        self.m0 = Tensor(np.zeros(d_x), requires_grad=True, name="m0")
        self.L0_free = Tensor(np.eye(d_x), requires_grad=True, name="L0")
        self.learn_c = learn_c
        self.learn_noise = learn_noise

    @property
    def Q(self) -> Tensor:
        return ad.exp(self.log_q)

    @property
    def R(self) -> Tensor:
        return ad.exp(self.log_r)

    @property
    def L0(self) -> Tensor:
        return ad.tril(self.L0_free)

    def parameters(self, prefix: str = "ssm") -> Dict[str, Tensor]:
        params = {f"{prefix}.m0": self.m0, f"{prefix}.L0": self.L0_free}
        if self.learn_noise:
            params.update({f"{prefix}.log_q": self.log_q, f"{prefix}.log_r": self.log_r})
        if self.learn_c:
            params[f"{prefix}.C"] = self.C
        return params


@dataclass
class Ensemble:
    members: Tensor
    """`(N, d_x)` state samples."""

    def __post_init__(self):
        self.members = ad.as_tensor(self.members)
        if self.members.ndim != 2 or self.members.shape[0] < 2:
            raise ContractViolation(f"an ensemble needs at least 2 members, got shape {self.members.shape}")

    @property
    def N(self) -> int:
        return self.members.shape[0]

    def moments(self) -> Tuple[Tensor, Tensor]:
        return empirical_moments(self.members)


def initial_ensemble(ssm: SSMParameters, n: int, rng: np.random.Generator) -> Tensor:
    """`x_0^{(i)} = m_0 + L_0·ε^{(i)}`."""
    eps = rng.standard_normal((n, ssm.d_x))
    return ssm.m0 + eps @ ad.transpose(ssm.L0)


def transition_sample(members, step: Step, Q: Tensor, eta: np.ndarray, gp_rng: np.random.Generator) -> Tensor:
    """`x̄^{(i)} = f(x^{(i)}) + Q^{½}·η^{(i)}`."""
    members = ad.as_tensor(members)
    fx = step(members, gp_rng)
    if fx.shape != members.shape:
        raise ContractViolation(f"transition returned {fx.shape} for an ensemble of {members.shape}")
    return fx + ad.sqrt(Q) * eta


def empirical_moments(members) -> Tuple[Tensor, Tensor]:
    """Ensemble mean and `N − 1` normalized covariance."""
    members = ad.as_tensor(members)
    n = members.shape[0]
    if n < 2:
        raise ContractViolation(f"need at least 2 members for a covariance, got {n}")
    mean = ad.mean(members, axis=0)
    dev = members - mean
    cov = (ad.transpose(dev) @ dev) / float(n - 1)
    return mean, 0.5 * (cov + ad.transpose(cov))


def _innovation_cov(P: Tensor, C: Tensor, R: Optional[Tensor]) -> Tensor:
    S = C @ P @ ad.transpose(C)
    if R is not None:
        S = S + R * np.eye(C.shape[0])
    return S


def kalman_gain(P, C, R) -> Tensor:
    """`G = P̄ Cᵀ (C P̄ Cᵀ + R)⁻¹` through a Cholesky factorization."""
    P, C, R = ad.as_tensor(P), ad.as_tensor(C), ad.as_tensor(R)
    Ly = ad.cholesky(_innovation_cov(P, C, R))
    Gt = ad.solve_triangular(Ly, ad.solve_triangular(Ly, C @ P), transpose=True)
    return ad.transpose(Gt)


def enkf_update(members, y, G, C, R, eps: np.ndarray) -> Tensor:
    """Perturbed-observation update `x^{(i)} = x̄^{(i)} + G(y + R^{½}ε^{(i)} − C x̄^{(i)})`."""
    members, G, C, R = ad.as_tensor(members), ad.as_tensor(G), ad.as_tensor(C), ad.as_tensor(R)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (C.shape[0],):
        raise ContractViolation(f"observation of shape {y.shape} does not match emission {C.shape}")
    innovation = (ad.sqrt(R) * eps + y) - members @ ad.transpose(C)
    return members + innovation @ ad.transpose(G)


def step_loglik(mean, P, C, R, y, include_r: bool = True) -> Tensor:
    """Gaussian log-density of `y` at `C m̄` with covariance `C P̄ Cᵀ (+ R)`."""
    mean, P, C = ad.as_tensor(mean), ad.as_tensor(P), ad.as_tensor(C)
    y = np.asarray(y, dtype=np.float64)
    L = ad.cholesky(_innovation_cov(P, C, ad.as_tensor(R) if include_r else None))
    resid = y - ad.reshape(C @ ad.reshape(mean, (C.shape[1], 1)), (C.shape[0],))
    z = ad.solve_triangular(L, resid)
    d_y = C.shape[0]
    return -0.5 * ad.sum(ad.square(z)) - 0.5 * ad.logdet_from_cholesky(L) - 0.5 * d_y * LOG_2PI


@dataclass
class FilterResult:
    loglik: Tensor
    """Accumulated log-likelihood (scalar, on the graph)."""
    step_logliks: np.ndarray
    """Per-step terms, `(T,)`."""
    ensembles: List[Tensor] = field(default_factory=list)
    """Filtered ensembles `x_0, ..., x_T`."""

    @property
    def members(self) -> np.ndarray:
        """`(T + 1, N, d_x)` array of filtered ensembles."""
        return np.stack([e.values for e in self.ensembles])

    @property
    def means(self) -> np.ndarray:
        return self.members.mean(axis=1)


def _check_finite(members: Tensor, t: int) -> None:
    bad = ~np.all(np.isfinite(members.values), axis=1)
    if np.any(bad):
        raise FilterDivergenceException(t, int(np.argmax(bad)))


def run_filter(
    ssm: SSMParameters,
    step: Step,
    y: np.ndarray,
    streams: RandomStreams,
    n_ensemble: int = 200,
    include_r: bool = True,
    members: Optional[Tensor] = None,
) -> FilterResult:
    """Filter `y_{1:T}` starting from an ensemble drawn from `q(x_0)` (or the given `members`).

    Per step: transition draw, predictive moments, log-likelihood of `y_t`, gain, perturbed update.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1, ssm.d_y)
    if n_ensemble < 2:
        raise ContractViolation(f"ensemble size must be at least 2, got {n_ensemble}")
    X = initial_ensemble(ssm, n_ensemble, streams.filter) if members is None else ad.as_tensor(members)
    Q, R, C = ssm.Q, ssm.R, ssm.C

    ensembles = [X]
    loglik: Tensor = Tensor(0.0)
    terms = []
    for t in range(1, len(y) + 1):
        eta = streams.filter.standard_normal(X.shape)
        Xbar = transition_sample(X, step, Q, eta, streams.gp)
        _check_finite(Xbar, t)
        mean, P = empirical_moments(Xbar)
        try:
            ll = step_loglik(mean, P, C, R, y[t - 1], include_r=include_r)
            G = kalman_gain(P, C, R)
        except ad.DecompositionException as e:
            raise FilterDivergenceException(t, -1, str(e)) from e
        eps = streams.filter.standard_normal((X.shape[0], ssm.d_y))
        X = enkf_update(Xbar, y[t - 1], G, C, R, eps)
        _check_finite(X, t)
        loglik = loglik + ll
        terms.append(ll.item())
        ensembles.append(X)
    return FilterResult(loglik=loglik, step_logliks=np.array(terms), ensembles=ensembles)


def free_run(
    ssm: SSMParameters, step: Step, members, steps: int, streams: RandomStreams
) -> np.ndarray:
    """Propagate an ensemble `steps` times without updates, `(steps, N, d_x)`."""
    X = ad.as_tensor(members)
    out = []
    with ad.no_grad():
        Q = ssm.Q
        for t in range(1, steps + 1):
            eta = streams.filter.standard_normal(X.shape)
            X = transition_sample(X, step, Q, eta, streams.gp)
            _check_finite(X, t)
            out.append(X.values)
    return np.stack(out) if out else np.zeros((0,) + X.shape)
