"""Binary search-space tree with mutation and visit counters.

Depth ``d`` of the tree splits dimension ``d`` at its threshold, so a
root-to-leaf path is one threshold decision per dimension and names one of
``n_s = 2 ** n_h`` subspaces. Internal nodes count how often the dimension
at their depth was mutated inside their prefix region; leaves count how
often their subspace was evaluated. Both counters feed a reciprocal weight
``1 / (1 + t)`` so that heavily explored regions become less likely to be
explored again.

Dimensions are 0-based in this API. Depths in serialised snapshots are
1-based (depth ``d + 1`` holds dimension ``d``).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .selection import roulette_select
from .space import Genotype, SearchSpace, subspace_index_ranges


@dataclass(frozen=True)
class PathKey:
    bits: tuple[int, ...]

    @classmethod
    def from_leaf(cls, leaf: int, n_h: int) -> "PathKey":
        return cls(tuple(int(b) for b in format(leaf, f"0{n_h}b")))

    @property
    def leaf(self) -> int:
        """Big-endian integer value of the path bits."""
        out = 0
        for b in self.bits:
            out = (out << 1) | b
        return out

    def prefix(self, length: int) -> tuple[int, ...]:
        return self.bits[:length]

    def __str__(self) -> str:
        return "".join(map(str, self.bits))


def pathway(space: SearchSpace, g: Genotype) -> PathKey:
    """Locate the subspace of ``g``: bit ``d`` is 1 iff dimension ``d`` sits at or above its threshold."""
    return PathKey(tuple(int(i >= d.threshold_index) for d, i in zip(space.dims, g.indices)))


def reciprocal(t: int) -> float:
    return 1.0 / (1.0 + t)


def _normalise(counts: Sequence[int], exact: bool):
    if exact:
        w = [Fraction(1, 1 + int(t)) for t in counts]
        total = sum(w)
        return [x / total for x in w]
    w = 1.0 / (1.0 + np.asarray(counts, dtype=float))
    return w / w.sum()


class SpaceTree:
    """Counter store for one search space.

    Internal counters are kept lazily in a dict keyed by
    ``(depth, prefix)`` where ``prefix`` is the tuple of the first
    ``depth`` path bits; missing keys read as zero.
    """

    def __init__(self, n_h: int):
        if n_h < 1:
            raise ValueError("tree needs at least one dimension")
        self.n_h = n_h
        self.n_s = 2**n_h
        self.internal_counts: dict[tuple[int, tuple[int, ...]], int] = {}
        self.leaf_counts: list[int] = [0] * self.n_s

    @classmethod
    def for_space(cls, space: SearchSpace) -> "SpaceTree":
        return cls(space.n_h)

    def path_counts(self, p: PathKey) -> list[int]:
        """Mutation counters of the internal nodes along ``p``, root first."""
        return [self.internal_counts.get((d, p.prefix(d)), 0) for d in range(1, self.n_h + 1)]

    def record_evaluation(self, p: PathKey) -> None:
        self.leaf_counts[p.leaf] += 1

    def record_mutation(self, p: PathKey, dim: int) -> None:
        if not 0 <= dim < self.n_h:
            raise ValueError(f"dimension {dim} outside 0..{self.n_h - 1}")
        key = (dim + 1, p.prefix(dim + 1))
        self.internal_counts[key] = self.internal_counts.get(key, 0) + 1

    @property
    def total_mutations(self) -> int:
        return sum(self.internal_counts.values())

    @property
    def total_evaluations(self) -> int:
        return sum(self.leaf_counts)

    def copy(self) -> "SpaceTree":
        other = SpaceTree(self.n_h)
        other.internal_counts = dict(self.internal_counts)
        other.leaf_counts = list(self.leaf_counts)
        return other

    def snapshot(self) -> dict:
        internal = [
            {"depth": depth, "prefix": "".join(map(str, prefix)), "count": count}
            for (depth, prefix), count in sorted(self.internal_counts.items())
        ]
        return {"n_h": self.n_h, "leaf_counts": list(self.leaf_counts), "internal_counts": internal}

    @classmethod
    def from_snapshot(cls, data: dict) -> "SpaceTree":
        tree = cls(int(data["n_h"]))
        leaves = [int(c) for c in data["leaf_counts"]]
        if len(leaves) != tree.n_s or min(leaves) < 0:
            raise ValueError("leaf_counts must hold n_s non-negative counts")
        tree.leaf_counts = leaves
        for item in data.get("internal_counts", []):
            depth, prefix, count = int(item["depth"]), item["prefix"], int(item["count"])
            if not 1 <= depth <= tree.n_h or len(prefix) != depth or count < 0:
                raise ValueError(f"bad internal counter entry {item}")
            tree.internal_counts[(depth, tuple(int(c) for c in prefix))] = count
        return tree

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SpaceTree):
            return NotImplemented
        return self.snapshot() == other.snapshot()


def dimension_probabilities(tree: SpaceTree, p: PathKey, exact: bool = False):
    """Probability of mutating each dimension of an individual on path ``p``.

    Each internal node along the path contributes ``1 / (1 + t)`` where ``t``
    is its mutation count; the vector is that weight normalised. With
    ``exact=True`` a list of Fractions is returned instead of a float array.
    """
    return _normalise(tree.path_counts(p), exact)


def subspace_probabilities(tree: SpaceTree, exact: bool = False):
    """Probability of each leaf subspace, ``1 / (1 + t)`` over its visit count, normalised."""
    return _normalise(tree.leaf_counts, exact)


def _uniform_index(lo: int, hi: int, rng: np.random.Generator) -> int:
    return int(rng.integers(lo, hi + 1))


def tsm_mutate_individual(
    tree: SpaceTree, space: SearchSpace, g: Genotype, rng: np.random.Generator
) -> Genotype:
    """Tree-guided mutation of a given individual.

    Picks one dimension by roulette over :func:`dimension_probabilities`,
    redraws its value uniformly from the sub-range that dimension occupies
    on the individual's path, and records the mutation in ``tree``. The
    individual therefore never leaves its subspace.
    """
    p = pathway(space, g)
    dim = roulette_select(dimension_probabilities(tree, p), rng)
    lo, hi = space.dims[dim].index_range(p.bits[dim])
    indices = list(g.indices)
    indices[dim] = _uniform_index(lo, hi, rng)
    child = space.genotype(indices)
    tree.record_mutation(pathway(space, child), dim)
    return child


def tsm_sample_individual(tree: SpaceTree, space: SearchSpace, rng: np.random.Generator) -> Genotype:
    """Draw a fresh individual from a tree-selected subspace.

    A leaf is chosen by roulette over :func:`subspace_probabilities`; every
    dimension is then sampled uniformly inside that leaf's ranges.
    """
    leaf = roulette_select(subspace_probabilities(tree), rng)
    path = PathKey.from_leaf(leaf, tree.n_h)
    ranges = subspace_index_ranges(space, path.bits)
    return space.genotype([_uniform_index(lo, hi, rng) for lo, hi in ranges])


def leaf_paths(n_h: int) -> Iterable[PathKey]:
    for leaf in range(2**n_h):
        yield PathKey.from_leaf(leaf, n_h)
