"""## Named random streams

All randomness of a run flows from one seed. Each concern draws from its own stream so that one
of them can be frozen or perturbed without touching the others.
"""

from __future__ import annotations

import numpy as np
from typing import Optional

STREAMS = ["init", "filter", "gp", "weights"]


class RandomStreams:
    """Seeded generators `init` (parameter initialization), `filter` (initial ensemble, process and
    observation noise), `gp` (function draws) and `weights` (network weight draws)."""

    init: np.random.Generator
    filter: np.random.Generator
    gp: np.random.Generator
    weights: np.random.Generator

    def __init__(self, seed: int, epoch: Optional[int] = None, draw: int = 0) -> None:
        self.seed = seed
        self.epoch = epoch
        self.draw = draw
        entropy = [seed, 0 if epoch is None else epoch + 1, draw]
        children = np.random.SeedSequence(entropy).spawn(len(STREAMS))
        for name, child in zip(STREAMS, children):
            setattr(self, name, np.random.default_rng(child))

    def fork(self, epoch: int) -> RandomStreams:
        """Fresh streams for an iteration, still a pure function of (seed, epoch)."""
        return RandomStreams(self.seed, epoch)

    def sample(self, draw: int) -> RandomStreams:
        """Independent streams for the `draw`-th Monte Carlo sample of the same iteration."""
        return RandomStreams(self.seed, self.epoch, draw)
