"""Grid fixpoint for reachable and controllable sets.

Trajectories are launched from active cells under each sampled constant
control for ``step_T`` time units.  Every output cell touched by a dense
sampling of those trajectories is marked.  What becomes active next depends on
the launch mode:

``lattice`` (default)
    Launch points live on a refinement of the output grid.  The fine cell
    holding each trajectory end point becomes active and launches from its
    center.  The successor relation depends on the fine cell alone, so the
    result grows monotonically with the control sample list.
``cell``
    Every newly marked output cell launches from its representative points
    (center plus corners pulled toward it).  This snaps the state to the
    coarse grid at every cell crossing and, on 150x150 grids, smears thin
    sets such as a homoclinic loop over most of the window.

Each trajectory is integrated independently of the others in its batch, so
the fixpoint does not depend on the order in which active cells are taken.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dynamics import TOL_GRID, ControlAffineSystem, dopri_batch
from ..errors import EmptySeeds, NoControls
from .grid import CellSet, Grid

STEP_T = 0.3
CHUNK = 4096
MAX_EXTEND = 40
REFINE = 4
LAUNCH_MODES = ("lattice", "cell")


@dataclass(frozen=True, eq=False)
class ReachInfo:
    """Fixpoint bitmap plus bookkeeping.

    ``lattice`` holds the cells of ``fine`` that launched trajectories;
    ``escaped`` records whether any sample fell outside the window.
    """

    cells: CellSet
    fine: Grid
    lattice: np.ndarray
    escaped: bool
    sweeps: int
    trajectories: int


def refined(grid: Grid, refine: int) -> Grid:
    if refine < 1:
        raise ValueError("refine must be a positive integer")
    return Grid(grid.lower, grid.upper, tuple(c * refine for c in grid.shape))


def _hermite(x0, x1, k0, k1, h, s):
    # x0.. have shape (n, d); s has shape (n, K)
    s = s[:, :, None]
    s2, s3 = s * s, s * s * s
    hh = h[:, None, None]
    return ((2 * s3 - 3 * s2 + 1) * x0[:, None, :] + (s3 - 2 * s2 + s) * hh * k0[:, None, :]
            + (-2 * s3 + 3 * s2) * x1[:, None, :] + (s3 - s2) * hh * k1[:, None, :])


def _box_distance(X, lo, hi):
    return np.linalg.norm(np.maximum(np.maximum(lo - X, X - hi), 0.0), axis=1)


class _Marker:
    """``on_step`` callback marking every cell touched by accepted steps.

    Samples are spaced at most half the smallest cell edge apart, using the
    larger of the two endpoint speeds of each step.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        self.marks = np.zeros(grid.size, dtype=bool)
        self.half_edge = 0.5 * float(np.min(grid.edges))
        self.escaped = False

    def mark_points(self, P):
        flat, inside = self.grid.flat_index(P)
        if not inside.all():
            self.escaped = True
        self.marks[flat[inside]] = True

    def __call__(self, idx, t0, h, x0, x1, k0, k1):
        lo, hi = self.grid.lower, self.grid.upper
        speed = np.maximum(np.linalg.norm(k0, axis=1), np.linalg.norm(k1, axis=1))
        # a step whose endpoints are farther from the window than its length cannot touch it
        reach = np.linalg.norm(x1 - x0, axis=1) + h * speed
        near = (_box_distance(x0, lo, hi) <= reach) | (_box_distance(x1, lo, hi) <= reach)
        if not near.all():
            self.escaped = True
        if not near.any():
            return
        x0, x1, k0, k1, h, speed = x0[near], x1[near], k0[near], k1[near], h[near], speed[near]
        n = np.maximum(np.ceil(h * speed / self.half_edge), 1.0).astype(np.int64)
        j = np.arange(1, int(n.max()) + 1)[None, :]
        P = _hermite(x0, x1, k0, k1, h, np.minimum(j / n[:, None], 1.0))
        self.mark_points(P[j <= n[:, None]])


def sample_controls(sys: ControlAffineSystem, rho: float, controls=None) -> np.ndarray:
    """Control samples as an ``(n, m)`` array, defaulting to ``{rho*lo, 0, rho*hi}^m``."""
    if controls is None:
        C = sys.default_controls(rho)
    else:
        C = np.asarray(controls, dtype=float)
        C = C.reshape(-1, sys.m) if C.size else np.empty((0, sys.m))
    if C.shape[0] == 0:
        raise NoControls("the control sample list is empty")
    for u in C:
        if not sys.in_range(u, rho):
            raise ValueError(f"control value {list(u)} is outside U^rho for rho={rho}")
    return C


def seed_cells(grid: Grid, seeds) -> np.ndarray:
    """Flat indices of the cells holding ``seeds``; raises when a seed is outside."""
    P = np.asarray(seeds, dtype=float)
    if P.size == 0:
        raise EmptySeeds("no seed points given")
    P = P.reshape(-1, grid.d)
    flat, inside = grid.flat_index(P)
    if not inside.all():
        raise ValueError(f"seed {list(P[~inside][0])} lies outside the grid window")
    return np.unique(flat)


def reach_fixpoint(sys: ControlAffineSystem, alpha: float, rho: float, grid: Grid, cells=None,
                   step_T: float = STEP_T, controls=None, reversed: bool = False,
                   tol: float = TOL_GRID, launch: str = "lattice", refine: int = REFINE,
                   order: str = "ascending", chunk: int = CHUNK, max_sweeps: int | None = None,
                   max_extend: int = MAX_EXTEND, lattice_seeds=None, rng=None) -> ReachInfo:
    """Fixpoint of the marking sweep.

    Parameters
    ----------
    cells
        Flat indices of seed cells, launched from their representative points.
    lattice_seeds
        Flat indices of fine cells (lattice mode only) launched from their centers.
    order
        ``ascending``, ``descending`` or ``shuffle``; changes the processing
        schedule only.
    max_extend
        A trajectory that ends inside the cell it was launched from is
        continued for further ``step_T`` periods, at most this many times, so
        that slow passages near equilibria are not cut off.
    """
    if not step_T > 0:
        raise ValueError("step_T must be positive")
    if launch not in LAUNCH_MODES:
        raise ValueError(f"unknown launch mode {launch!r}")
    if order not in ("ascending", "descending", "shuffle"):
        raise ValueError(f"unknown order {order!r}")
    C = sample_controls(sys, rho, controls)
    fine = refined(grid, refine) if launch == "lattice" else grid
    cells = np.unique(np.asarray([] if cells is None else cells, dtype=np.int64))
    lat = np.unique(np.asarray([] if lattice_seeds is None else lattice_seeds, dtype=np.int64))
    if cells.size == 0 and lat.size == 0:
        raise EmptySeeds("no seed cells given")
    if lat.size and launch != "lattice":
        raise ValueError("lattice seeds require launch='lattice'")

    sign = -1.0 if reversed else 1.0
    marker = _Marker(grid)
    marker.marks[cells] = True
    launched = np.zeros(fine.size, dtype=bool)
    launched[lat] = True
    if lat.size:
        marker.marks[grid.flat_index(fine.centers(lat))[0]] = True
    if launch == "cell":
        launched[cells] = True
    starts = np.vstack([grid.representatives(cells).reshape(-1, grid.d), fine.centers(lat)])
    rng = np.random.default_rng(rng)
    sweeps = traj_count = 0

    while len(starts):
        if max_sweeps is not None and sweeps >= max_sweeps:
            break
        sweeps += 1
        if order == "descending":
            starts = starts[::-1]
        elif order == "shuffle":
            starts = starts[rng.permutation(len(starts))]
        before = marker.marks.copy()
        ends = np.zeros(fine.size, dtype=bool)
        for lo in range(0, len(starts), chunk):
            X = np.repeat(starts[lo:lo + chunk], len(C), axis=0)
            U = np.tile(C, (len(X) // len(C), 1))
            home, _ = fine.flat_index(X)
            traj_count += len(X)
            for _ in range(max_extend + 1):
                def fun(idx, Y, U=U):
                    return sign * sys.vector_field_batch(alpha, Y, U[idx])

                X, status = dopri_batch(fun, X, step_T, tol, on_step=marker)
                flat, inside = fine.flat_index(X)
                ok = (status == 0) & inside
                ends[flat[ok]] = True
                # slow trajectories that have not left their launch cell keep going
                stay = ok & (flat == home)
                if not stay.any():
                    break
                X, U, home = X[stay], U[stay], home[stay]
        if launch == "lattice":
            active = np.flatnonzero(ends & ~launched)
            starts = fine.centers(active)
        else:
            active = np.flatnonzero(marker.marks & ~before & ~launched)
            starts = grid.representatives(active).reshape(-1, grid.d)
        launched[active] = True
    return ReachInfo(CellSet(grid, marker.marks.reshape(grid.shape).copy()), fine,
                     np.flatnonzero(launched), marker.escaped, sweeps, traj_count)


def expand(sys: ControlAffineSystem, alpha: float, rho: float, grid: Grid, seeds,
           step_T: float = STEP_T, controls=None, reversed: bool = False,
           tol: float = TOL_GRID, **opts) -> CellSet:
    """Grid approximation of the reachable set (controllable set when ``reversed``) of ``seeds``.

    ``controls`` defaults to ``{rho*lo, 0, rho*hi}`` per channel.  Cells
    outside the window are never marked.  Further keyword options are passed
    to :func:`reach_fixpoint`.

    Raises
    ------
    EmptySeeds
        No seed points.
    NoControls
        Empty control sample list.
    """
    cells = seed_cells(grid, seeds)
    return reach_fixpoint(sys, alpha, rho, grid, cells, step_T, controls, reversed, tol,
                          **opts).cells
