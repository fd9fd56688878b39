"""Deterministic random-stream derivation.

Every stochastic component derives its generator from a root seed plus
context indices, so concurrent or reordered work cannot perturb another
stream. The same derivation is reimplemented by test oracles; keep it
boring: SeedSequence over the masked 64-bit parts.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def rng_for(*parts: int) -> np.random.Generator:
    """A generator keyed by the ordered integer parts."""
    return np.random.default_rng(np.random.SeedSequence([int(p) & _MASK for p in parts]))
