"""## Adam

Parameters are addressed by name (`Dict[str, Tensor]`), the same names used in checkpoints.
Maximization is done by handing the optimizer the gradients of the negated objective.
"""
from __future__ import annotations

import numpy as np
from dataclasses import dataclass, field
from typing import Dict, Mapping

from .tensor import ContractViolation, Tensor
from ..misc.log import get_logger

logger = get_logger(__name__)


@dataclass
class AdamState:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    """Number of applied updates."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    """First-moment accumulators."""
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    """Second-moment accumulators."""
    skipped: int = 0
    """Number of updates skipped because of non-finite gradients."""

    def __post_init__(self):
        if self.lr < 0:
            raise ContractViolation(f"learning rate must be non-negative, got {self.lr}")


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState) -> bool:
    """Apply one bias-corrected Adam descent step in place.

    Returns `False` (and leaves parameters and moments untouched) if any gradient is non-finite.
    """
    for name, param in params.items():
        if name not in grads:
            raise ContractViolation(f"no gradient for parameter {name}")
        if np.shape(grads[name]) != param.shape:
            raise ContractViolation(f"gradient shape {np.shape(grads[name])} != {param.shape} for {name}")

    bad = [name for name in params if not np.all(np.isfinite(grads[name]))]
    if bad:
        state.skipped += 1
        logger.warning("non-finite gradient for %s, Adam step %d skipped", ", ".join(bad), state.step + 1)
        return False

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, param in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name, np.zeros(param.shape))
        v = state.v.get(name, np.zeros(param.shape))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        update = (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
        param.assign(param.values - update)
    return True


class Adam:
    """Optimizer over a fixed set of named parameters."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 0.005, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, grads: Mapping[Tensor, np.ndarray]) -> bool:
        """`grads` as returned by `backward`, keyed by tensor."""
        return adam_step(self.params, {name: grads[p] for name, p in self.params.items()}, self.state)
