"""Counter-based random streams for disorder sampling.

Every (master_seed, trial) pair gets its own Philox stream, derived through
numpy's SeedSequence spawn keys. Nothing here holds global state, so trials
can be drawn in any order and on any thread and still give the same numbers.

Within a trial, draw i belongs to graph vertex i. A vertex therefore sees the
same omega in every finite volume that contains it.
"""
from __future__ import annotations

import logging

import numpy as np

from core.errors import ValidationError

logger = logging.getLogger(__name__)

_SEED_MASK = (1 << 64) - 1


def trial_generator(master_seed: int, trial: int) -> np.random.Generator:
    """Independent generator for one disorder trial."""
    if trial < 0:
        raise ValidationError("trial index must be non-negative")
    ss = np.random.SeedSequence(int(master_seed) & _SEED_MASK, spawn_key=(int(trial),))
    return np.random.Generator(np.random.Philox(ss))


def vertex_uniforms(master_seed: int, trial: int, count: int) -> np.ndarray:
    """`count` U[0,1) draws for one trial; entry i belongs to vertex i."""
    if count < 0:
        raise ValidationError("count must be non-negative")
    return trial_generator(master_seed, trial).random(count)


def lag1_autocorrelation(samples: np.ndarray) -> float:
    """Sample lag-1 autocorrelation, used as a stream sanity check."""
    x = np.asarray(samples, dtype=float)
    if x.size < 3:
        raise ValidationError("need at least 3 samples")
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom == 0.0:
        return 0.0
    return float(np.dot(x[:-1], x[1:]) / denom)


__all__ = ["trial_generator", "vertex_uniforms", "lag1_autocorrelation"]
