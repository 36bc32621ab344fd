"""Dyadic partitions of the unit cube.

A cell at level ``k`` has side ``r = 2**-k`` and integer coordinates in
``[0, 2**k - 1]``; its extent is the half-open box
``prod_i [c_i * r, (c_i + 1) * r)``.  Cells are plain values; no tree is built.
Enumeration order within a level is lexicographic on the coordinates, which is
numpy's C order for an array of shape ``(2**k,) * d``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import DomainError


@dataclass(frozen=True, order=True)
class Cell:
    level: int
    coords: tuple[int, ...]

    def __post_init__(self):
        if self.level < 0:
            raise DomainError(f"negative level {self.level}")
        side = 1 << self.level
        for c in self.coords:
            if not 0 <= c < side:
                raise DomainError(f"coordinate {c} outside [0, {side - 1}] at level {self.level}")

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def side(self) -> float:
        return 2.0 ** -self.level

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.asarray(self.coords, dtype=float) * self.side
        return lo, lo + self.side

    def contains(self, x) -> bool:
        """Membership in the half-open extent (no boundary clamping)."""
        lo, hi = self.bounds()
        x = np.asarray(x, dtype=float)
        return bool(np.all((x >= lo) & (x < hi)))

    def parent(self) -> "Cell":
        if self.level == 0:
            raise DomainError("the root cell has no parent")
        return Cell(self.level - 1, tuple(c >> 1 for c in self.coords))

    def ancestor(self, level: int) -> "Cell":
        if not 0 <= level <= self.level:
            raise DomainError(f"level {level} is not coarser than {self.level}")
        shift = self.level - level
        return Cell(level, tuple(c >> shift for c in self.coords))

    def index(self) -> int:
        """Position of the cell in the lexicographic enumeration of its level."""
        return cell_index(np.asarray([self.coords]), self.level)[0]

    def __str__(self) -> str:
        return f"{self.level}:{','.join(map(str, self.coords))}"

    @classmethod
    def parse(cls, text: str) -> "Cell":
        level, _, coords = text.partition(":")
        return cls(int(level), tuple(int(c) for c in coords.split(",")))


def cell_at(x, level: int) -> Cell:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    coords = cell_coords(x[None, :], level)[0]
    return Cell(level, tuple(int(c) for c in coords))


def cell_coords(X, level: int) -> np.ndarray:
    """Integer coordinates of the level-``level`` cells containing each row of ``X``.

    The coordinate 1.0 is clamped into the last cell.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DomainError(f"expected an (n, d) array, got shape {X.shape}")
    if np.any(~((X >= 0.0) & (X <= 1.0))):
        raise DomainError("point coordinates must lie in [0, 1]")
    side = 1 << level
    return np.minimum(np.floor(X * side).astype(np.int64), side - 1)


def cell_index(coords, level: int) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.int64)
    side = 1 << level
    idx = np.zeros(coords.shape[0], dtype=np.int64)
    for j in range(coords.shape[1]):
        idx = idx * side + coords[:, j]
    return idx


def index_coords(index, level: int, dim: int) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    side = 1 << level
    out = np.empty((index.shape[0], dim), dtype=np.int64)
    rem = index.copy()
    for j in range(dim - 1, -1, -1):
        out[:, j] = rem % side
        rem //= side
    return out


def refine(cell: Cell) -> list[Cell]:
    base = tuple(2 * c for c in cell.coords)
    return [Cell(cell.level + 1, tuple(b + o for b, o in zip(base, offs)))
            for offs in itertools.product((0, 1), repeat=cell.dim)]


def refine_coords(coords) -> np.ndarray:
    """Children coordinates of a block of cells, 2**d consecutive rows per parent."""
    coords = np.asarray(coords, dtype=np.int64)
    d = coords.shape[1]
    offsets = np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)
    return (2 * coords[:, None, :] + offsets[None, :, :]).reshape(-1, d)


def barycenter(cell: Cell) -> np.ndarray:
    return (np.asarray(cell.coords, dtype=float) + 0.5) * cell.side


def barycenters(coords, level: int) -> np.ndarray:
    return (np.asarray(coords, dtype=float) + 0.5) * 2.0 ** -level


@dataclass(frozen=True)
class DyadicPartition:
    level: int
    dim: int

    def __len__(self) -> int:
        return 1 << (self.level * self.dim)

    @property
    def side(self) -> float:
        return 2.0 ** -self.level

    @property
    def shape(self) -> tuple[int, ...]:
        return (1 << self.level,) * self.dim

    def coords(self) -> np.ndarray:
        """All cell coordinates in enumeration order, shape ``(len(self), dim)``."""
        return index_coords(np.arange(len(self)), self.level, self.dim)

    def __iter__(self) -> Iterator[Cell]:
        for row in self.coords():
            yield Cell(self.level, tuple(int(c) for c in row))

    def locate(self, X) -> np.ndarray:
        """Enumeration index of the cell containing each row of ``X``."""
        return cell_index(cell_coords(X, self.level), self.level)


def expand_block(coords, from_level: int, to_level: int) -> np.ndarray:
    """Indices at ``to_level`` of every descendant of each coarse cell.

    Returns an array of shape ``(len(coords), 2**((to_level - from_level) * d))``.
    """
    coords = np.asarray(coords, dtype=np.int64)
    if to_level < from_level:
        raise DomainError("cannot expand to a coarser level")
    d = coords.shape[1]
    shift = to_level - from_level
    span = 1 << shift
    offsets = np.array(list(itertools.product(range(span), repeat=d)), dtype=np.int64).reshape(-1, d)
    fine = (coords[:, None, :] << shift) + offsets[None, :, :]
    return cell_index(fine.reshape(-1, d), to_level).reshape(coords.shape[0], -1)


def points_in_cells(coords: Sequence, level: int, counts, rng: np.random.Generator) -> np.ndarray:
    """Uniform points inside each cell; ``counts[i]`` points for cell ``i``, grouped in order."""
    coords = np.asarray(coords, dtype=np.int64)
    counts = np.asarray(counts, dtype=np.int64)
    owner = np.repeat(np.arange(coords.shape[0]), counts)
    u = rng.random((owner.shape[0], coords.shape[1]))
    return (coords[owner] + u) * 2.0 ** -level
