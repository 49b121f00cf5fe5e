"""## Known dynamics

Wraps a true (numpy) transition so the same ensemble filter runs with the real dynamics. When the
data are standardized the wrapped function is conjugated with the standardization.
"""
from __future__ import annotations

import numpy as np
from typing import Callable, Optional, Tuple

from ..autodiff import Tensor
from .base import BoundTransition, Transition


class BoundKnown(BoundTransition):
    def __init__(self, transition: KnownTransition) -> None:
        self.transition = transition

    def sample(self, X, rng):
        values = X.values if isinstance(X, Tensor) else np.asarray(X, dtype=np.float64)
        return Tensor(self.transition.apply(values))

    def moments(self, X) -> Tuple[np.ndarray, np.ndarray]:
        mean = self.sample(X, None).values
        return mean, np.zeros_like(mean)


class KnownTransition(Transition):
    name = "enkf"

    def __init__(
        self,
        fn: Callable[[np.ndarray], np.ndarray],
        d_x: int,
        shift: Optional[np.ndarray] = None,
        scale: Optional[np.ndarray] = None,
    ) -> None:
        self.fn, self.d_x = fn, d_x
        self.shift = np.zeros(d_x) if shift is None else np.asarray(shift, dtype=np.float64)
        self.scale = np.ones(d_x) if scale is None else np.asarray(scale, dtype=np.float64)

    def apply(self, X: np.ndarray) -> np.ndarray:
        raw = X * self.scale + self.shift
        return (self.fn(raw) - self.shift) / self.scale

    def bind(self, weights=None) -> BoundKnown:
        return BoundKnown(self)
