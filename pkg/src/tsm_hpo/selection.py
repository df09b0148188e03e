"""Roulette-wheel selection and the rank weights that feed it."""

from __future__ import annotations

import math
from bisect import bisect_left
from itertools import accumulate
from typing import Sequence

import numpy as np

from .errors import DegenerateWeights, NonFiniteFitness


def selection_weights(fitnesses: Sequence[float], minimize: bool = True) -> np.ndarray:
    """Linear rank weights for roulette selection.

    The best of ``n`` individuals gets weight ``n``, the worst gets 1, and
    the vector is normalised to sum to 1. Tied fitnesses share their average
    rank, so the weights are invariant to shifting or rescaling the
    fitnesses and permute along with them.

    Raises:
        NonFiniteFitness: if any fitness is NaN or infinite.
    """
    f = np.asarray(fitnesses, dtype=float)
    if f.ndim != 1 or f.size == 0:
        raise ValueError("need a non-empty 1-d fitness list")
    if not np.all(np.isfinite(f)):
        raise NonFiniteFitness(f"non-finite fitness in {f.tolist()}")
    key = f if minimize else -f
    # rank 1 is the best; ties get the mean of the ranks they span
    order = np.argsort(key, kind="stable")
    sorted_key = key[order]
    ranks = np.empty(f.size)
    start = 0
    while start < f.size:
        stop = start + 1
        while stop < f.size and sorted_key[stop] == sorted_key[start]:
            stop += 1
        ranks[order[start:stop]] = (start + 1 + stop) / 2.0
        start = stop
    w = f.size - ranks + 1.0
    return w / w.sum()


def roulette_select(weights: Sequence[float], rng: np.random.Generator) -> int:
    """Spin the wheel once.

    One uniform draw ``u`` in ``(0, total]`` is compared to the cumulative
    weights; the first index whose cumulative weight reaches ``u`` wins, so
    draws landing exactly on a boundary go to the lower index and
    zero-weight entries are never picked.
    """
    w = weights.tolist() if isinstance(weights, np.ndarray) else [float(x) for x in weights]
    if not w:
        raise ValueError("need a non-empty weight vector")
    cdf = list(accumulate(w))
    total = cdf[-1]
    # a NaN or infinite weight makes the total non-finite
    if min(w) < 0 or not math.isfinite(total):
        raise ValueError(f"weights must be finite and non-negative: {w}")
    if total <= 0:
        raise DegenerateWeights("all roulette weights are zero")
    u = (1.0 - rng.random()) * total
    i = bisect_left(cdf, u)
    # float slack can push u past the last cumulative entry
    if i == len(w):
        i = max(k for k, x in enumerate(w) if x > 0)
    return i
