"""Seed handling.

All stochastic operations take explicit integer seeds.  Sub-streams (one per
trace, per label, ...) are derived from a master seed plus integer counters via
``numpy``'s SeedSequence, so runs are byte-reproducible across platforms and
independent of execution order.
"""

from __future__ import annotations

import numpy as np


def derive_rng(seed: int, *counters: int) -> np.random.Generator:
    """PCG64 generator for stream ``counters`` under master ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, counters)])))


def derive_seed(seed: int, *counters: int) -> int:
    """A fresh integer seed for stream ``counters`` under master ``seed``."""
    return int(np.random.SeedSequence([int(seed), *map(int, counters)]).generate_state(1)[0])
