"""## Independent-GP transition

The conventional GPSSM transition: one sparse GP per state dimension, output `d` depending only on
GP `d`. Cost and parameter count grow with `d_x` times the single-GP cost.
"""
from __future__ import annotations

import numpy as np
from typing import Dict, List, Optional, Tuple

from .. import autodiff as ad
from ..autodiff import Tensor
from ..gp import SparseGP, gp_predict, gp_sample, kl_inducing
from .base import BoundTransition, Transition


class BoundIndependentGP(BoundTransition):
    def __init__(self, gps: List[SparseGP]) -> None:
        self.conds = [gp.conditional() for gp in gps]

    def sample(self, X, rng):
        X = ad.as_tensor(X)
        eps = rng.standard_normal((X.shape[0], len(self.conds)))
        columns = [gp_sample(cond, X, eps[:, d]) for d, cond in enumerate(self.conds)]
        return ad.stack(columns, axis=1)

    def moments(self, X) -> Tuple[np.ndarray, np.ndarray]:
        with ad.no_grad():
            pairs = [gp_predict(cond, X) for cond in self.conds]
        return (
            np.stack([mean.values for mean, _ in pairs], axis=1),
            np.stack([var.values for _, var in pairs], axis=1),
        )

    def kl_inducing(self) -> Tensor:
        total = Tensor(0.0)
        for cond in self.conds:
            total = total + kl_inducing(cond)
        return total


class IndependentGPTransition(Transition):
    name = "gpssm-independent"

    gps: List[SparseGP]

    def __init__(self, d_x: int, M: int = 20, rng: Optional[np.random.Generator] = None) -> None:
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_x = d_x
        self.gps = [SparseGP(d_x, M, rng) for _ in range(d_x)]

    def parameters(self) -> Dict[str, Tensor]:
        params = {}
        for d, gp in enumerate(self.gps):
            params.update(gp.parameters(f"gp{d}"))
        return params

    def bind(self, weights=None) -> BoundIndependentGP:
        return BoundIndependentGP(self.gps)

    def parameter_counts(self) -> Dict[str, int]:
        gp = sum(g.Z.size + g.m.size + g.S_factor.size + 3 for g in self.gps)
        return {"gp": int(gp), "nn": 0}
