"""## Gradient checking

Central finite differences against the reverse-mode gradient. Stochastic objectives must be
evaluated with common random numbers (re-create the same `RandomStreams` inside `fn`).
"""
from __future__ import annotations

import numpy as np
from typing import Callable, Iterable, Mapping, Optional

from .tensor import ArrayLike, Tensor, backward, no_grad


class OracleFailureException(Exception):
    """The checked function produced a non-finite value."""


def _value(out: Tensor, where: str) -> float:
    value = out.item()
    if not np.isfinite(value):
        raise OracleFailureException(f"non-finite function value {value} at {where}")
    return value


def _relative_error(ad: np.ndarray, fd: np.ndarray) -> float:
    if ad.size == 0:
        return 0.0
    return float(np.max(np.abs(ad - fd) / (np.abs(fd) + 1e-8)))


def finite_difference_check(fn: Callable[[Tensor], Tensor], point: ArrayLike, h: float = 1e-5) -> float:
    """Max over coordinates of `|AD − FD| / (|FD| + 1e-8)` for a scalar-valued `fn` at `point`."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x0 = np.array(point, dtype=np.float64)
    x = Tensor(x0, requires_grad=True)
    out = fn(x)
    _value(out, "the base point")
    ad = backward(out)[x]

    fd = np.zeros_like(x0)
    with no_grad():
        for idx in np.ndindex(*x0.shape):
            up, down = x0.copy(), x0.copy()
            up[idx] += h
            down[idx] -= h
            f_up = _value(fn(Tensor(up)), f"{idx}+h")
            f_down = _value(fn(Tensor(down)), f"{idx}-h")
            fd[idx] = (f_up - f_down) / (2 * h)
    return _relative_error(ad, fd)


def parameter_gradient_check(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    coordinates: Optional[Iterable[tuple]] = None,
) -> float:
    """Same check for a closure over named parameter leaves.

    `coordinates` is an iterable of `(name, index)` pairs to perturb (all coordinates of all
    parameters by default). Parameter values are restored afterwards.
    """
    leaves = list(params.values())
    for leaf in leaves:
        leaf.requires_grad = True
    out = fn()
    _value(out, "the base point")
    grads = backward(out)

    if coordinates is None:
        coordinates = [(name, idx) for name, p in params.items() for idx in np.ndindex(*p.shape)]

    ad, fd = [], []
    with no_grad():
        for name, idx in coordinates:
            param = params[name]
            base = param.values.copy()
            try:
                values = base.copy()
                values[idx] += h
                param.assign(values)
                f_up = _value(fn(), f"{name}{idx}+h")
                values[idx] -= 2 * h
                param.assign(values)
                f_down = _value(fn(), f"{name}{idx}-h")
            finally:
                param.assign(base)
            ad.append(grads[param][idx])
            fd.append((f_up - f_down) / (2 * h))
    return _relative_error(np.array(ad), np.array(fd))
