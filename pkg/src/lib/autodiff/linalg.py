"""## Differentiable dense linear algebra

Cholesky factorization with an escalating-jitter retry, triangular solves and diagonal extraction.
Gradients follow the standard symbolic rules for these factorizations.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

from .tensor import ContractViolation, Tensor, _make, as_tensor, log, sum as tsum
from ..misc.log import get_logger

logger = get_logger(__name__)

JITTER_START = 1e-6
JITTER_MAX = 1e-2


class DecompositionException(Exception):
    """Cholesky failed even after jitter escalation."""

    def __init__(self, shape, jitter: float):
        super().__init__(
            f"matrix of shape {shape} is not positive definite (jitter escalated up to {jitter:.1e}·mean(diag))"
        )
        self.jitter = jitter


def _phi(x: np.ndarray) -> np.ndarray:
    """Lower triangle with halved diagonal."""
    out = np.tril(x)
    out[np.diag_indices_from(out)] *= 0.5
    return out


def cholesky_factor(a: np.ndarray) -> np.ndarray:
    """Plain numpy lower Cholesky factor with the jitter policy, no graph recording."""
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractViolation(f"cholesky expects a square matrix, got {a.shape}")
    try:
        return scipy.linalg.cholesky(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass

    scale = float(np.mean(np.abs(np.diag(a)))) or 1.0
    eye = np.eye(a.shape[0])
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            factor = scipy.linalg.cholesky(a + jitter * scale * eye, lower=True, check_finite=False)
            logger.warning("cholesky of %s matrix needed jitter %.1e·mean(diag)", a.shape, jitter)
            return factor
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise DecompositionException(a.shape, JITTER_MAX)


def cholesky(a) -> Tensor:
    """Lower-triangular L with L·Lᵀ = a (+ jitter if needed).

    The input is treated as symmetric: only its lower triangle is read, and the gradient returned is
    the symmetric one.
    """
    a = as_tensor(a)
    if not np.all(np.isfinite(a.values)):
        raise DecompositionException(a.shape, 0.0)
    factor = cholesky_factor(a.values)

    def backward_fn(g):
        p = _phi(factor.T @ g)
        # L^{-T} P L^{-1}
        tmp = scipy.linalg.solve_triangular(factor, p, trans="T", lower=True)
        grad = scipy.linalg.solve_triangular(factor, tmp.T, trans="T", lower=True).T
        return (0.5 * (grad + grad.T),)

    return _make(factor, (a,), backward_fn)


def solve_triangular(lower, b, transpose: bool = False) -> Tensor:
    """Solve `L·X = b` (or `Lᵀ·X = b` with `transpose`) for lower-triangular `L`."""
    lower, b = as_tensor(lower), as_tensor(b)
    if lower.ndim != 2 or lower.shape[0] != lower.shape[1]:
        raise ContractViolation(f"triangular factor must be square, got {lower.shape}")
    if b.ndim not in (1, 2) or b.shape[0] != lower.shape[0]:
        raise ContractViolation(f"cannot solve {lower.shape} against {b.shape}")
    trans = "T" if transpose else "N"
    x = scipy.linalg.solve_triangular(lower.values, b.values, trans=trans, lower=True, check_finite=False)

    def backward_fn(g):
        gb = scipy.linalg.solve_triangular(
            lower.values, g, trans="N" if transpose else "T", lower=True, check_finite=False
        )
        gb2, x2 = np.atleast_2d(gb.T).T, np.atleast_2d(x.T).T
        if transpose:
            gl = -np.tril(x2 @ gb2.T)
        else:
            gl = -np.tril(gb2 @ x2.T)
        return gl, gb

    return _make(x, (lower, b), backward_fn)


def diagonal(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ContractViolation(f"diagonal expects a matrix, got {a.shape}")
    n = min(a.shape)

    def backward_fn(g):
        out = np.zeros(a.shape)
        out[np.arange(n), np.arange(n)] = g
        return (out,)

    return _make(np.diagonal(a.values).copy(), (a,), backward_fn)


def tril(a) -> Tensor:
    """Lower triangle of a matrix (used to keep free factors triangular)."""
    a = as_tensor(a)
    return _make(np.tril(a.values), (a,), lambda g: (np.tril(g),))


def logdet_from_cholesky(lower) -> Tensor:
    """`log det(L·Lᵀ)` given the factor `L`."""
    return 2.0 * tsum(log(diagonal(lower)))
