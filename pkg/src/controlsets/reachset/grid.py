"""Rectangular grids and cell bitmaps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import GridMismatch


@dataclass(frozen=True, eq=False)
class Grid:
    """Axis-aligned box split into ``cells_per_axis`` equal cells per axis.

    Cell ``i`` along an axis covers ``(lower + i*h, lower + (i+1)*h]``; a point
    on a shared face belongs to the lower-index cell, and the left boundary of
    the box belongs to cell 0.
    """

    lower: np.ndarray
    upper: np.ndarray
    cells_per_axis: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        n = tuple(int(c) for c in np.broadcast_to(self.cells_per_axis, lo.shape))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be vectors of the same length")
        if not np.all(lo < hi):
            raise ValueError("lower must be < upper componentwise")
        if any(c < 1 for c in n):
            raise ValueError("cells_per_axis must be positive")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "cells_per_axis", n)

    def __eq__(self, other):
        return (isinstance(other, Grid) and self.cells_per_axis == other.cells_per_axis
                and np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper))

    def __hash__(self):
        return hash((tuple(self.lower), tuple(self.upper), self.cells_per_axis))

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def shape(self) -> tuple:
        return self.cells_per_axis

    @property
    def size(self) -> int:
        return int(np.prod(self.cells_per_axis))

    @property
    def edges(self) -> np.ndarray:
        return (self.upper - self.lower) / np.asarray(self.cells_per_axis)

    @property
    def window(self):
        return self.lower, self.upper

    def locate(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Multi-indices ``(N, d)`` of ``points`` and a mask of points inside the box."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        r = (P - self.lower) / self.edges
        n = np.asarray(self.cells_per_axis)
        inside = np.all((r >= 0) & (r <= n), axis=1) & np.all(np.isfinite(P), axis=1)
        with np.errstate(invalid="ignore"):
            idx = np.maximum(np.ceil(np.where(np.isfinite(r), r, 0.0)) - 1, 0).astype(np.int64)
        idx = np.minimum(idx, n - 1)
        return idx, inside

    def flat_index(self, points) -> tuple[np.ndarray, np.ndarray]:
        idx, inside = self.locate(points)
        return np.ravel_multi_index(idx.T, self.cells_per_axis), inside

    def cell_of(self, point) -> int:
        flat, inside = self.flat_index(point)
        if not inside[0]:
            raise ValueError(f"point {list(point)} lies outside the grid")
        return int(flat[0])

    def unravel(self, flat) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(flat), self.cells_per_axis), axis=-1)

    def centers(self, flat) -> np.ndarray:
        return self.lower + (self.unravel(flat) + 0.5) * self.edges

    def representatives(self, flat, pull: float = 0.1) -> np.ndarray:
        """Center plus the ``2^d`` corners pulled ``pull`` of the way toward it; ``(n, 2^d+1, d)``."""
        c = self.centers(np.atleast_1d(flat))
        signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * self.d, indexing="ij")).reshape(self.d, -1).T
        offsets = np.vstack([np.zeros(self.d), signs * 0.5 * (1.0 - pull) * self.edges])
        return c[:, None, :] + offsets[None, :, :]

    def empty(self) -> "CellSet":
        return CellSet(self, np.zeros(self.shape, dtype=bool))

    def from_flat(self, flat) -> "CellSet":
        bm = np.zeros(self.size, dtype=bool)
        bm[np.asarray(flat, dtype=np.int64)] = True
        return CellSet(self, bm.reshape(self.shape))

    def from_points(self, points) -> "CellSet":
        flat, inside = self.flat_index(points)
        return self.from_flat(flat[inside])


class CellSet:
    """Bitmap of marked cells on a :class:`Grid`.  Set operations require the same grid."""

    __slots__ = ("grid", "bitmap")

    def __init__(self, grid: Grid, bitmap: np.ndarray):
        bitmap = np.asarray(bitmap, dtype=bool)
        if bitmap.shape != grid.shape:
            raise GridMismatch(f"bitmap shape {bitmap.shape} does not match grid {grid.shape}")
        self.grid = grid
        self.bitmap = bitmap

    def _check(self, other: "CellSet"):
        if not isinstance(other, CellSet) or self.grid != other.grid:
            raise GridMismatch("cell sets live on different grids")

    def __or__(self, other):
        self._check(other)
        return CellSet(self.grid, self.bitmap | other.bitmap)

    def __and__(self, other):
        self._check(other)
        return CellSet(self.grid, self.bitmap & other.bitmap)

    def __sub__(self, other):
        self._check(other)
        return CellSet(self.grid, self.bitmap & ~other.bitmap)

    def __eq__(self, other):
        return isinstance(other, CellSet) and self.grid == other.grid and np.array_equal(self.bitmap, other.bitmap)

    def __le__(self, other):
        self._check(other)
        return not np.any(self.bitmap & ~other.bitmap)

    def __len__(self):
        return int(self.bitmap.sum())

    def __bool__(self):
        return bool(self.bitmap.any())

    def __contains__(self, flat) -> bool:
        return bool(self.bitmap.flat[int(flat)])

    def __repr__(self):
        return f"CellSet({len(self)} of {self.grid.size} cells)"

    def contains_point(self, point) -> bool:
        flat, inside = self.grid.flat_index(point)
        return bool(inside[0] and self.bitmap.flat[flat[0]])

    def contains_points(self, points) -> np.ndarray:
        flat, inside = self.grid.flat_index(points)
        return inside & self.bitmap.reshape(-1)[flat]

    def flat(self) -> np.ndarray:
        return np.flatnonzero(self.bitmap)

    def indices(self) -> np.ndarray:
        return np.argwhere(self.bitmap)

    def centers(self) -> np.ndarray:
        return self.grid.centers(self.flat())

    def dilate(self, cells: int = 1) -> "CellSet":
        if cells <= 0:
            return CellSet(self.grid, self.bitmap.copy())
        st = ndimage.generate_binary_structure(self.grid.d, self.grid.d)
        return CellSet(self.grid, ndimage.binary_dilation(self.bitmap, st, iterations=cells))

    def bounding_box(self):
        idx = self.indices()
        lo = self.grid.lower + idx.min(axis=0) * self.grid.edges
        hi = self.grid.lower + (idx.max(axis=0) + 1) * self.grid.edges
        return lo, hi

    def to_csv(self) -> str:
        """``i,j[,k],x_center,y_center[,z_center]`` per cell, sorted by index."""
        idx = self.indices()  # argwhere is already lexicographic
        cen = self.grid.lower + (idx + 0.5) * self.grid.edges
        lines = []
        for row, c in zip(idx, cen):
            lines.append(",".join([str(int(v)) for v in row] + [f"{v:.12g}" for v in c]))
        return "\n".join(lines) + ("\n" if lines else "")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, grid: Grid, text: str) -> "CellSet":
        bm = np.zeros(grid.shape, dtype=bool)
        for line in text.splitlines():
            if line.strip():
                parts = line.split(",")
                bm[tuple(int(p) for p in parts[:grid.d])] = True
        return cls(grid, bm)
