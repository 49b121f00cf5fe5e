"""## Sparse variational Gaussian process

A squared-exponential ARD kernel and a sparse GP summarized by M inducing inputs `Z` with a
Gaussian `q(u) = N(m, S)` over the inducing outputs, `S = L·Lᵀ`.

Everything that only depends on the GP parameters (the Cholesky factor of `K_ZZ`, `K_ZZ⁻¹m`,
`K_ZZ⁻¹L`) is computed once into a `GPConditional` and reused for every prediction of a filter
run:
```
cond = gp.conditional()
mean, var = gp_predict(cond, X)
f = gp_sample(cond, X, rng.standard_normal(len(X)))
```
"""
from __future__ import annotations

import numpy as np
from typing import Dict, Optional, Tuple

from . import autodiff as ad
from .autodiff import ContractViolation, Tensor
from .misc.log import get_logger

logger = get_logger(__name__)

NEGATIVE_VARIANCE_WARNING = -1e-8


class SEKernel:
    """Squared-exponential kernel with one lengthscale per input dimension."""

    log_variance: Tensor
    """Log signal variance (scalar)."""
    log_lengthscales: Tensor
    """Log lengthscales, shape `(d_x,)`."""
    log_noise: float
    """Unused by the kernel itself, kept so that parameter counts follow the 3-scalar convention."""

    def __init__(self, d_x: int, variance: float = 1.0, lengthscale: float = 1.0) -> None:
        self.d_x = d_x
        self.log_variance = Tensor(np.log(variance), requires_grad=True, name="log_variance")
        self.log_lengthscales = Tensor(
            np.full(d_x, np.log(lengthscale)), requires_grad=True, name="log_lengthscales"
        )
        self.log_noise = 0.0

    @property
    def variance(self) -> Tensor:
        return ad.exp(self.log_variance)

    def parameters(self, prefix: str = "kernel") -> Dict[str, Tensor]:
        return {
            f"{prefix}.log_variance": self.log_variance,
            f"{prefix}.log_lengthscales": self.log_lengthscales,
        }


def kernel_eval(kernel: SEKernel, X, X2) -> Tensor:
    """Gram matrix `σ²·exp(−½ Σ_d (x_d − x'_d)²/ℓ_d²)` of shape `(n, n')`.

    Squared distances are expanded as `‖a‖² + ‖b‖² − 2·a·bᵀ` on the scaled inputs so that the
    cost is one `(n, d)×(d, n')` product rather than an `(n, n', d)` difference tensor.
    """
    X, X2 = ad.as_tensor(X), ad.as_tensor(X2)
    if X.ndim != 2 or X2.ndim != 2 or X.shape[1] != kernel.d_x or X2.shape[1] != kernel.d_x:
        raise ContractViolation(f"kernel on {kernel.d_x} dims got inputs {X.shape} and {X2.shape}")
    inv_ls = ad.exp(-kernel.log_lengthscales)
    A, B = X * inv_ls, X2 * inv_ls
    m = X2.shape[0]
    a2 = ad.sum(ad.square(A), axis=1, keepdims=True)
    b2 = ad.reshape(ad.sum(ad.square(B), axis=1), (1, m))
    # rounding can push coincident points slightly below zero
    sqdist = ad.clamp_min(a2 + b2 - 2.0 * (A @ ad.transpose(B)), 0.0)
    return kernel.variance * ad.exp(-0.5 * sqdist)


def kernel_diag(kernel: SEKernel, X) -> Tensor:
    """`k(x, x)` for every row, exactly the signal variance."""
    X = ad.as_tensor(X)
    return ad.broadcast_to(kernel.variance, (X.shape[0],))


class SparseGP:
    """Inducing inputs, variational parameters and kernel of one scalar-output GP."""

    Z: Tensor
    """Inducing inputs, `(M, d_x)`."""
    m: Tensor
    """Variational mean of the inducing outputs, `(M,)`."""
    S_factor: Tensor
    """Free `(M, M)` matrix whose lower triangle is the factor of `S`."""
    kernel: SEKernel

    def __init__(
        self,
        d_x: int,
        M: int = 20,
        rng: Optional[np.random.Generator] = None,
        Z: Optional[np.ndarray] = None,
    ) -> None:
        if M < 1:
            raise ContractViolation("a sparse GP needs at least one inducing input")
        if Z is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            Z = rng.standard_normal((M, d_x))
        Z = np.asarray(Z, dtype=np.float64).reshape(M, d_x)
        if len(np.unique(Z, axis=0)) != M:
            raise ContractViolation("inducing inputs must be pairwise distinct")

        self.d_x, self.M = d_x, M
        self.Z = Tensor(Z, requires_grad=True, name="Z")
        self.m = Tensor(np.zeros(M), requires_grad=True, name="m")
        self.S_factor = Tensor(np.eye(M), requires_grad=True, name="S_factor")
        self.kernel = SEKernel(d_x)

    def parameters(self, prefix: str = "gp") -> Dict[str, Tensor]:
        params = {f"{prefix}.Z": self.Z, f"{prefix}.m": self.m, f"{prefix}.S_factor": self.S_factor}
        params.update(self.kernel.parameters(f"{prefix}.kernel"))
        return params

    def conditional(self) -> GPConditional:
        return GPConditional(self)


class GPConditional:
    """Quantities of `q(f̃)` shared by all query points."""

    def __init__(self, gp: SparseGP) -> None:
        self.gp = gp
        self.kernel = gp.kernel
        self.Kzz = kernel_eval(gp.kernel, gp.Z, gp.Z)
        self.Lz = ad.cholesky(self.Kzz)
        self.Lf = ad.tril(gp.S_factor)
        # K_ZZ⁻¹ m and K_ZZ⁻¹ L
        self.a = ad.solve_triangular(self.Lz, ad.solve_triangular(self.Lz, gp.m), transpose=True)
        self.B = ad.solve_triangular(self.Lz, ad.solve_triangular(self.Lz, self.Lf), transpose=True)

    def cross(self, X) -> Tensor:
        return kernel_eval(self.kernel, self.gp.Z, X)


def _warn_negative(var: np.ndarray) -> None:
    low = float(np.min(var)) if var.size else 0.0
    if low < NEGATIVE_VARIANCE_WARNING:
        logger.warning("GP predictive variance %.3e below zero, clamped", low)


def gp_predict(cond: GPConditional, X) -> Tuple[Tensor, Tensor]:
    """Marginal predictive mean and variance of `q(f̃)` at each row of `X`."""
    X = ad.as_tensor(X)
    Kzx = cond.cross(X)
    n = X.shape[0]
    mean = ad.reshape(ad.transpose(Kzx) @ ad.reshape(cond.a, (cond.gp.M, 1)), (n,))
    A = ad.solve_triangular(cond.Lz, Kzx)
    BtK = ad.transpose(cond.B) @ Kzx
    var = kernel_diag(cond.kernel, X) - ad.sum(ad.square(A), axis=0) + ad.sum(ad.square(BtK), axis=0)
    _warn_negative(var.values)
    return mean, ad.clamp_min(var, 0.0)


def gp_sample(cond: GPConditional, X, eps) -> Tensor:
    """Reparameterized marginal draw `ξ(x) + √Ξ(x)·ε`, one standard normal `ε` per row."""
    mean, var = gp_predict(cond, X)
    eps = np.asarray(eps, dtype=np.float64).reshape(mean.shape)
    return mean + ad.sqrt(var) * eps


def gp_joint_predict(cond: GPConditional, X) -> Tuple[Tensor, Tensor]:
    """Predictive mean `(n,)` and full covariance `(n, n)` of `q(f̃)`."""
    X = ad.as_tensor(X)
    Kzx = cond.cross(X)
    n = X.shape[0]
    mean = ad.reshape(ad.transpose(Kzx) @ ad.reshape(cond.a, (cond.gp.M, 1)), (n,))
    A = ad.solve_triangular(cond.Lz, Kzx)
    BtK = ad.transpose(cond.B) @ Kzx
    cov = kernel_eval(cond.kernel, X, X) - ad.transpose(A) @ A + ad.transpose(BtK) @ BtK
    return mean, cov


def gp_sample_joint(cond: GPConditional, X, eps) -> Tensor:
    """Correlated draw of `f̃` at all rows of `X`."""
    mean, cov = gp_joint_predict(cond, X)
    L = ad.cholesky(0.5 * (cov + ad.transpose(cov)))
    eps = np.asarray(eps, dtype=np.float64).reshape(mean.shape[0], 1)
    return mean + ad.reshape(L @ eps, mean.shape)


def kl_inducing(cond: GPConditional) -> Tensor:
    """`KL(N(m, S) ‖ N(0, K_ZZ))` in closed form."""
    M = cond.gp.M
    trace = ad.sum(ad.square(ad.solve_triangular(cond.Lz, cond.Lf)))
    maha = ad.sum(ad.square(ad.solve_triangular(cond.Lz, cond.gp.m)))
    logdet_p = ad.logdet_from_cholesky(cond.Lz)
    logdet_q = ad.sum(ad.log(ad.square(ad.diagonal(cond.Lf))))
    return 0.5 * (trace + maha - M + logdet_p - logdet_q)
