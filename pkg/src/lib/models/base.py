"""## Transition interface

A transition owns the parameters of `f` in `x_t = f(x_{t−1}) + N(0, Q)`. Once per optimization
iteration it is *bound* to a weight draw: binding does all parameter-only work (GP conditionals)
and returns a callable the filter applies at every step.
"""
from __future__ import annotations

import numpy as np
from abc import abstractmethod
from typing import Dict, Optional, Tuple

from ..autodiff import Tensor
from ..flows import Weights


class BoundTransition:
    """`f` with its weights fixed, ready to be applied to ensembles."""

    def __call__(self, X: Tensor, rng: np.random.Generator) -> Tensor:
        return self.sample(X, rng)

    @abstractmethod
    def sample(self, X: Tensor, rng: np.random.Generator) -> Tensor:
        """One draw of `f(x)` per row of `X`."""

    @abstractmethod
    def moments(self, X: Tensor) -> Tuple[np.ndarray, np.ndarray]:
        """Mean and variance of `f(x)` per row and dimension (process noise excluded)."""

    def kl_inducing(self) -> Tensor:
        return Tensor(0.0)


class Transition:
    """Abstract transition model."""

    name: str
    """Variant family, e.g. `etgpssm`."""
    d_x: int
    bayesian: bool = False
    """Whether weights are drawn from `q(w)` each iteration."""

    def parameters(self) -> Dict[str, Tensor]:
        return {}

    def sample_weights(self, rng: Optional[np.random.Generator] = None) -> Optional[Weights]:
        return None

    def kl_weights(self) -> Tensor:
        return Tensor(0.0)

    @abstractmethod
    def bind(self, weights: Optional[Weights] = None) -> BoundTransition:
        """Fix the weights (the point weights when `None`)."""

    def parameter_counts(self) -> Dict[str, int]:
        """Trainable counts split into GP-side and network-side terms, kernel counted as 3 scalars."""
        return {"gp": 0, "nn": 0}
