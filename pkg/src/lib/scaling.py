"""## Parameter counts and transition timing

Counts follow the convention where a kernel is worth 3 scalars (signal variance, lengthscale,
noise), whatever the actual shape of its hyperparameters:

| family              | GP term                  | network term      |
|---------------------|--------------------------|-------------------|
| `etgpssm`           | `M·d_x + 3 + M + M²`     | `258·d_x + 8384`  |
| `gpssm-independent` | `(M·d_x + 3 + M + M²)·d_x` | none            |

The network term is the `d_x → 128 → 64 → 2·d_x` linear-flow network with biases.
"""
from __future__ import annotations

import time
import numpy as np
import pandas as pd
from tqdm import tqdm
from typing import Dict, Iterable, List

from .autodiff import ContractViolation, Tensor, no_grad
from .glob import TEST_INSTANCE
from .misc.random import RandomStreams
from .models import VARIANTS, StateSpaceModel, build_model

COUNTED_FAMILIES = ["etgpssm", "gpssm-independent"]


def _family(variant: str) -> str:
    if variant in VARIANTS:
        return VARIANTS[variant].family
    if variant in COUNTED_FAMILIES:
        return variant
    raise ContractViolation(f"unknown variant {variant}")


def _model_variant(variant: str) -> str:
    return "etgpssm-dnn" if variant == "etgpssm" else variant


def count_parameters(variant: str, d_x: int, M: int) -> int:
    family = _family(variant)
    if family not in COUNTED_FAMILIES:
        raise ContractViolation(f"no closed-form count for {variant}, expected one of {COUNTED_FAMILIES}")
    if d_x < 1 or M < 1:
        raise ContractViolation("d_x and M must be positive")
    gp = M * d_x + 3 + M + M * M
    if family == "etgpssm":
        return gp + 258 * d_x + 8384
    return M * d_x * d_x + (3 + M + M * M) * d_x


def count_model_parameters(model: StateSpaceModel) -> Dict[str, int]:
    """GP-side and network-side counts read off the transition's tensors."""
    return model.transition.parameter_counts()


def time_transition(
    variant: str, d_x: int, M: int = 100, repetitions: int = 31, N: int = 200, seed: int = 0
) -> float:
    """Median wall time of one ensemble-transition evaluation (binding the GP conditional included)."""
    if repetitions < 1:
        raise ContractViolation("repetitions must be positive")
    model = build_model(_model_variant(variant), d_x, d_x, rng=np.random.default_rng(seed), M=M)
    streams = RandomStreams(seed)
    members = Tensor(streams.filter.standard_normal((N, d_x)))

    def evaluate():
        model.bind(streams)(members, streams.gp)

    timings: List[float] = []
    with no_grad():
        evaluate()  # warm-up
        for _ in tqdm(range(repetitions), desc=f"{variant} d_x={d_x}", disable=TEST_INSTANCE, leave=False):
            start = time.perf_counter()
            evaluate()
            timings.append(time.perf_counter() - start)
    return float(np.median(timings))


def scaling_study(
    variants: Iterable[str] = COUNTED_FAMILIES,
    dims: Iterable[int] = (5, 50),
    M: int = 100,
    repetitions: int = 31,
    N: int = 200,
) -> pd.DataFrame:
    rows = []
    for variant in variants:
        for d_x in dims:
            rows.append(
                {
                    "variant": variant,
                    "d_x": d_x,
                    "M": M,
                    "param_count": count_parameters(variant, d_x, M),
                    "median_seconds": time_transition(variant, d_x, M, repetitions, N),
                }
            )
    return pd.DataFrame(rows, columns=["variant", "d_x", "M", "param_count", "median_seconds"])
