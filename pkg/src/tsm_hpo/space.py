"""Gridded hyperparameter spaces and the fixed-length binary codec.

Every hyperparameter lives on an evenly spaced grid ``lower, lower + step,
..., upper``. Internally a setting is a tuple of grid indices; real values
are only materialised when a setting is handed to an evaluator or printed,
so fine grids such as a 0.0001-step learning rate never accumulate drift.

Each dimension also carries a threshold that splits its grid into a lower
half ``[lower, threshold - step]`` and an upper half ``[threshold, upper]``.
Choosing one half per dimension selects one of ``2 ** n_h`` subspaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import IndexOutOfGrid, ValueOffGrid

_GRID_TOL = 1e-9


def _snap(offset: float) -> int | None:
    """Round a fractional grid offset to an int, or None if it is off-grid."""
    k = round(offset)
    if abs(offset - k) > _GRID_TOL:
        return None
    return int(k)


@dataclass(frozen=True)
class HyperparameterDef:
    """One gridded hyperparameter.

    Attributes:
        name: Identifier used in evaluator requests and reports.
        lower: Smallest grid value.
        upper: Largest grid value.
        step: Grid resolution.
        threshold: Split point for the search tree. Must be a grid point
            strictly above ``lower``. Defaults to the lower median of the grid.
        bit_width: Codec length in bits. Defaults to the minimal width
            ``ceil(log2(grid_count))``.
    """

    name: str
    lower: float
    upper: float
    step: float
    threshold: float | None = None
    bit_width: int | None = None
    _count: int = field(init=False, repr=False, compare=False)
    _threshold_index: int = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("hyperparameter name must be non-empty")
        if not (math.isfinite(self.lower) and math.isfinite(self.upper) and math.isfinite(self.step)):
            raise ValueError(f"{self.name}: bounds and step must be finite")
        if self.step <= 0:
            raise ValueError(f"{self.name}: step must be > 0, got {self.step}")
        if self.upper <= self.lower:
            raise ValueError(f"{self.name}: upper ({self.upper}) must exceed lower ({self.lower})")
        span = _snap((self.upper - self.lower) / self.step)
        if span is None:
            raise ValueError(
                f"{self.name}: range {self.lower}..{self.upper} is not a multiple of step {self.step}"
            )
        count = span + 1
        object.__setattr__(self, "_count", count)

        if self.threshold is None:
            k = max(1, (count - 1) // 2)
            object.__setattr__(self, "threshold", self.value_at(k))
        else:
            k = _snap((self.threshold - self.lower) / self.step)
            if k is None:
                raise ValueOffGrid(f"{self.name}: threshold {self.threshold} is not on the grid")
            if not 1 <= k <= count - 1:
                raise ValueError(
                    f"{self.name}: threshold {self.threshold} must satisfy lower < threshold <= upper"
                )
        object.__setattr__(self, "_threshold_index", k)

        min_width = max(1, math.ceil(math.log2(count)))
        if self.bit_width is None:
            object.__setattr__(self, "bit_width", min_width)
        elif self.bit_width < min_width:
            raise ValueError(
                f"{self.name}: bit_width {self.bit_width} cannot address {count} grid points "
                f"(need at least {min_width})"
            )

    @property
    def grid_count(self) -> int:
        return self._count

    @property
    def threshold_index(self) -> int:
        """Grid index of the threshold; always in ``1 .. grid_count - 1``."""
        return self._threshold_index

    @property
    def is_integral(self) -> bool:
        return float(self.lower).is_integer() and float(self.step).is_integer()

    def value_at(self, index: int) -> float | int:
        """Materialise the grid value at ``index``."""
        if self.is_integral:
            return int(self.lower) + int(index) * int(self.step)
        # Round away representation noise at a precision well below the step.
        digits = max(0, -math.floor(math.log10(self.step))) + 8
        return round(self.lower + index * self.step, digits)

    def index_of(self, value: float) -> int:
        """Grid index of ``value``; raises ValueOffGrid if it does not snap."""
        k = _snap((value - self.lower) / self.step)
        if k is None or not 0 <= k < self._count:
            raise ValueOffGrid(f"{self.name}: {value} is not a grid value")
        return k

    def index_range(self, side: int) -> tuple[int, int]:
        """Inclusive index range of the lower (side 0) or upper (side 1) half."""
        if side == 0:
            return 0, self._threshold_index - 1
        return self._threshold_index, self._count - 1

    def values(self) -> list[float | int]:
        return [self.value_at(i) for i in range(self._count)]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lower": self.lower,
            "upper": self.upper,
            "step": self.step,
            "threshold": self.threshold,
            "bit_width": self.bit_width,
        }


def grid_count(hp: HyperparameterDef) -> int:
    return hp.grid_count


def encode(hp: HyperparameterDef, value: float) -> str:
    """Big-endian, zero-padded binary code of ``value``'s grid index."""
    return format(hp.index_of(value), f"0{hp.bit_width}b")


def decode(hp: HyperparameterDef, bits: str) -> float | int:
    """Inverse of :func:`encode`.

    Raises:
        IndexOutOfGrid: the code addresses an index past the grid (only
            possible when ``2 ** bit_width > grid_count``).
    """
    return hp.value_at(decode_index(hp, bits))


def decode_index(hp: HyperparameterDef, bits: str) -> int:
    if len(bits) != hp.bit_width:
        raise ValueError(f"{hp.name}: expected {hp.bit_width} bits, got {len(bits)}")
    index = int(bits, 2)
    if index >= hp.grid_count:
        raise IndexOutOfGrid(f"{hp.name}: code {bits} -> index {index} >= grid size {hp.grid_count}")
    return index


@dataclass(frozen=True)
class Genotype:
    """Grid indices of one setting together with their concatenated code.

    Build genotypes through :class:`SearchSpace` so that both
    representations stay consistent.
    """

    indices: tuple[int, ...]
    bits: str

    def __str__(self) -> str:
        return self.bits


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[HyperparameterDef, ...]

    def __init__(self, dims: Iterable[HyperparameterDef]):
        dims = tuple(dims)
        if not dims:
            raise ValueError("a search space needs at least one dimension")
        names = [d.name for d in dims]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate dimension names in {names}")
        object.__setattr__(self, "dims", dims)

    @property
    def n_h(self) -> int:
        return len(self.dims)

    @property
    def n_s(self) -> int:
        return 2 ** len(self.dims)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    @property
    def total_bits(self) -> int:
        return sum(d.bit_width for d in self.dims)

    @property
    def grid_size(self) -> int:
        return math.prod(d.grid_count for d in self.dims)

    def offsets(self) -> list[int]:
        """Start position of each dimension's fragment in the bitstring."""
        out, pos = [], 0
        for d in self.dims:
            out.append(pos)
            pos += d.bit_width
        return out

    def genotype(self, indices: Sequence[int]) -> Genotype:
        if len(indices) != self.n_h:
            raise ValueError(f"expected {self.n_h} indices, got {len(indices)}")
        indices = tuple(int(i) for i in indices)
        for d, i in zip(self.dims, indices):
            if not 0 <= i < d.grid_count:
                raise IndexOutOfGrid(f"{d.name}: index {i} outside 0..{d.grid_count - 1}")
        bits = "".join(format(i, f"0{d.bit_width}b") for d, i in zip(self.dims, indices))
        return Genotype(indices, bits)

    def from_bits(self, bits: str) -> Genotype:
        """Parse a full bitstring, clamping out-of-grid fragments to the last grid index."""
        if len(bits) != self.total_bits:
            raise ValueError(f"expected {self.total_bits} bits, got {len(bits)}")
        indices = []
        for d, start in zip(self.dims, self.offsets()):
            indices.append(min(int(bits[start : start + d.bit_width], 2), d.grid_count - 1))
        return self.genotype(indices)

    def from_values(self, values: dict[str, float] | Sequence[float]) -> Genotype:
        if isinstance(values, dict):
            missing = set(self.names) ^ set(values)
            if missing:
                raise ValueError(f"values must cover exactly {self.names}; mismatch on {sorted(missing)}")
            values = [values[n] for n in self.names]
        return self.genotype([d.index_of(v) for d, v in zip(self.dims, values)])

    def decode_values(self, g: Genotype) -> dict[str, float | int]:
        return {d.name: d.value_at(i) for d, i in zip(self.dims, g.indices)}

    def to_list(self) -> list[dict]:
        return [d.to_dict() for d in self.dims]

    @classmethod
    def from_list(cls, items: Iterable[dict]) -> "SearchSpace":
        return cls(HyperparameterDef(**item) for item in items)


def random_genotype(space: SearchSpace, rng: np.random.Generator) -> Genotype:
    """Draw every dimension's index uniformly from its grid."""
    return space.genotype([int(rng.integers(d.grid_count)) for d in space.dims])


def subspace_index_ranges(space: SearchSpace, path: Sequence[int]) -> list[tuple[int, int]]:
    if len(path) != space.n_h:
        raise ValueError(f"path length {len(path)} != n_h {space.n_h}")
    return [d.index_range(int(b)) for d, b in zip(space.dims, path)]


def subspace_ranges(space: SearchSpace, path: Sequence[int]) -> list[tuple[float, float]]:
    """Value range of each dimension inside the subspace selected by ``path``.

    A 0 bit picks ``[lower, threshold - step]``, a 1 bit ``[threshold, upper]``.
    """
    return [
        (d.value_at(lo), d.value_at(hi))
        for d, (lo, hi) in zip(space.dims, subspace_index_ranges(space, path))
    ]


def reference_space(batch_bit_width: int | None = None) -> SearchSpace:
    """The four-dimensional GNN search space: batch size, learning rate,
    graph-convolution width and fully-connected width."""
    return SearchSpace(
        [
            HyperparameterDef("batch_size", 8, 512, 8, threshold=256, bit_width=batch_bit_width),
            HyperparameterDef("learning_rate", 0.0001, 0.0032, 0.0001, threshold=0.0016),
            HyperparameterDef("graph_conv_size", 8, 512, 8, threshold=256),
            HyperparameterDef("dense_size", 32, 1024, 32, threshold=512),
        ]
    )
