"""Raster emitters for planar cell sets: ASCII PGM and SVG."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import GridMismatch
from ..reachset.grid import CellSet, Grid

BACKGROUND = 255
LEVELS = (200, 150, 100, 50)
FILLS = ("#c8c8c8", "#4f81bd", "#c0504d", "#9bbb59")
LINE_COLORS = ("#000000", "#d08000", "#7030a0", "#008080")
FORMATS = ("pgm", "svg")


def _common_grid(cells, grid: Grid | None) -> Grid:
    grids = [c.grid for c in cells]
    if grid is not None:
        grids.insert(0, grid)
    if not grids:
        raise ValueError("a grid is needed when no cell sets are given")
    g = grids[0]
    if any(other != g for other in grids[1:]):
        raise GridMismatch("all cell sets of a raster must share one grid")
    if g.d != 2:
        raise ValueError("rasters are only defined for planar grids")
    return g


def raster_levels(cells, grid: Grid | None = None) -> np.ndarray:
    """Gray levels as an image array: row 0 is the top (largest y), column 0 the smallest x."""
    cells = list(cells)
    if len(cells) > len(LEVELS):
        raise ValueError(f"at most {len(LEVELS)} layers are supported")
    g = _common_grid(cells, grid)
    img = np.full(g.shape, BACKGROUND, dtype=np.int64)  # indexed [i_x, j_y]
    for level, cs in zip(LEVELS, cells):
        img[cs.bitmap] = level
    return img.T[::-1]


def pgm_text(cells, grid: Grid | None = None) -> str:
    img = raster_levels(cells, grid)
    h, w = img.shape
    rows = "\n".join(" ".join(str(v) for v in row) for row in img)
    return f"P2\n{w} {h}\n255\n{rows}\n"


def svg_text(cells, grid: Grid | None = None, trajectories=(), scale: float = 4.0) -> str:
    """One rectangle per marked cell and one polyline per trajectory (arrays of points)."""
    cells = list(cells)
    if len(cells) > len(FILLS):
        raise ValueError(f"at most {len(FILLS)} layers are supported")
    g = _common_grid(cells, grid)
    nx, ny = g.shape
    W, H = nx * scale, ny * scale
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:g}" height="{H:g}" '
           f'viewBox="0 0 {W:g} {H:g}">',
           f'<rect x="0" y="0" width="{W:g}" height="{H:g}" fill="#ffffff"/>']
    for k, cs in enumerate(cells):
        out.append(f'<g fill="{FILLS[k]}">')
        for i, j in cs.indices():
            out.append(f'<rect x="{i * scale:g}" y="{(ny - 1 - j) * scale:g}" '
                       f'width="{scale:g}" height="{scale:g}"/>')
        out.append("</g>")
    for k, pts in enumerate(trajectories):
        P = np.asarray(pts, dtype=float).reshape(-1, 2)
        px = (P[:, 0] - g.lower[0]) / g.edges[0] * scale
        py = H - (P[:, 1] - g.lower[1]) / g.edges[1] * scale
        coords = " ".join(f"{a:.3f},{b:.3f}" for a, b in zip(px, py))
        out.append(f'<polyline fill="none" stroke="{LINE_COLORS[k % len(LINE_COLORS)]}" '
                   f'stroke-width="1" points="{coords}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_raster(cells, path, format: str = "pgm", grid: Grid | None = None,
                trajectories=()) -> Path:
    """Write ``cells`` (drawn in order, later layers on top) to ``path``.

    ``grid`` is only needed for an empty layer list.  Raises
    :class:`GridMismatch` when the layers live on different grids.
    """
    cells = [c for c in cells]
    if any(not isinstance(c, CellSet) for c in cells):
        raise TypeError("layers must be CellSet instances")
    if format == "pgm":
        text = pgm_text(cells, grid)
    elif format == "svg":
        text = svg_text(cells, grid, trajectories)
    else:
        raise ValueError(f"unknown raster format {format!r}")
    path = Path(path)
    path.write_text(text)
    return path
