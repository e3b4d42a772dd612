"""Control sets, invariance classification and chain transitive cell sets."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..dynamics import TOL_GRID, ControlAffineSystem, dopri_batch
from ..errors import EmptyControlSet
from .expand import STEP_T, ReachInfo, reach_fixpoint, refined, seed_cells
from .grid import CellSet, Grid

KINDS = ("invariant", "variant", "local")
ANCHORS = ("equilibrium", "limit_cycle", "homoclinic", "point")
CHAIN_REFINE = 2


@dataclass(frozen=True, eq=False)
class ControlSetResult:
    """Cell approximation of a control set.

    ``forward`` keeps the forward fixpoint the set was cut from (when there is
    one) so that the invariance check can restart from reached states.
    """

    cells: CellSet
    kind: str
    anchor: str
    anchor_point: np.ndarray
    alpha: float
    rho: float
    forward: ReachInfo | None = None
    backward: ReachInfo | None = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.cells:
            raise EmptyControlSet("a control set needs at least one cell")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.anchor not in ANCHORS:
            raise ValueError(f"anchor must be one of {ANCHORS}")
        object.__setattr__(self, "anchor_point", np.asarray(self.anchor_point, dtype=float))

    def __len__(self):
        return len(self.cells)

    def isolating_box(self, dilation: int = 1):
        """Bounding box of the cells grown by ``dilation`` cells, clipped to the window."""
        g = self.cells.grid
        lo, hi = self.cells.bounding_box()
        return (np.maximum(lo - dilation * g.edges, g.lower), np.minimum(hi + dilation * g.edges, g.upper))


def control_set(sys: ControlAffineSystem, alpha: float, rho: float, grid: Grid, p, q=None,
                mode: str = "intersect", anchor: str = "point", step_T: float = STEP_T,
                controls=None, tol: float = TOL_GRID, **opts) -> ControlSetResult:
    """Cell approximation of the control set through ``p`` and ``q``.

    ``mode="intersect"`` intersects the forward fixpoint from ``p`` with the
    reversed fixpoint from ``q`` (``q`` defaults to ``p``).  ``forward_only``
    returns the reachable set of ``p`` and ``reversed_only`` the controllable
    set of ``q``.  The kind starts as variant; see :func:`classify_invariance`.

    Raises
    ------
    EmptyControlSet
        The intersection is empty at this resolution.
    """
    q = p if q is None else q
    fw = bw = None
    if mode in ("intersect", "forward_only"):
        fw = reach_fixpoint(sys, alpha, rho, grid, seed_cells(grid, [p]), step_T, controls,
                            False, tol, **opts)
    if mode in ("intersect", "reversed_only"):
        bw = reach_fixpoint(sys, alpha, rho, grid, seed_cells(grid, [q]), step_T, controls,
                            True, tol, **opts)
    if fw is None and bw is None:
        raise ValueError(f"unknown mode {mode!r}")
    if fw is not None and bw is not None:
        cells = fw.cells & bw.cells
    else:
        cells = (fw or bw).cells
    if not cells:
        raise EmptyControlSet(f"forward set of {list(p)} and backward set of {list(q)} do not meet")
    point = p if mode != "reversed_only" else q
    return ControlSetResult(cells, "variant", anchor, point, float(alpha), float(rho), fw, bw,
                            {"mode": mode, "step_T": step_T, "tol": tol})


def _restart_seeds(cs: ControlSetResult):
    """Lattice points of the forward fixpoint that fall inside ``cs``, plus the anchor cell."""
    info = cs.forward
    grid = cs.cells.grid
    parent, _ = grid.flat_index(info.fine.centers(info.lattice))
    lattice = info.lattice[cs.cells.bitmap.reshape(-1)[parent]]
    anchor_cells = seed_cells(grid, [cs.anchor_point]) if cs.cells.contains_point(cs.anchor_point) \
        else np.empty(0, dtype=np.int64)
    return anchor_cells, lattice


def classify_invariance(sys: ControlAffineSystem, alpha: float, rho: float, grid: Grid,
                        cs: ControlSetResult, dilation: int = 1, seeding: str = "auto",
                        step_T: float | None = None, controls=None, tol: float | None = None,
                        **opts) -> ControlSetResult:
    """Mark ``cs`` invariant when nothing reachable from it leaves its ``dilation``-cell hull.

    ``seeding="cells"`` restarts from the representative points of every cell
    of ``cs``.  ``seeding="reached"`` restarts from the lattice states the
    forward fixpoint actually reached inside ``cs``: representative points of
    boundary cells lie up to a cell outside the set, and near a saddle that
    offset is amplified beyond any fixed dilation.  ``auto`` picks
    ``reached`` when the forward fixpoint is available.  Samples leaving the
    window count as leaving the set.
    """
    if cs.cells.grid != grid:
        raise ValueError("control set lives on a different grid")
    step_T = cs.details.get("step_T", STEP_T) if step_T is None else step_T
    tol = cs.details.get("tol", TOL_GRID) if tol is None else tol
    if seeding == "auto":
        seeding = "reached" if cs.forward is not None and cs.forward.lattice.size else "cells"
    if seeding == "reached":
        if cs.forward is None:
            raise ValueError("reached seeding needs the forward fixpoint")
        cells, lattice = _restart_seeds(cs)
        if cells.size == 0 and lattice.size == 0:
            cells, lattice = cs.cells.flat(), None
        refine = cs.forward.fine.shape[0] // grid.shape[0]
        info = reach_fixpoint(sys, alpha, rho, grid, cells, step_T, controls, False, tol,
                              lattice_seeds=lattice, refine=refine, **opts)
    elif seeding == "cells":
        info = reach_fixpoint(sys, alpha, rho, grid, cs.cells.flat(), step_T, controls, False,
                              tol, **opts)
    else:
        raise ValueError(f"unknown seeding {seeding!r}")
    hull = cs.cells.dilate(dilation)
    outside = info.cells - hull
    invariant = not info.escaped and not outside
    details = dict(cs.details, invariance={"dilation": dilation, "seeding": seeding,
                                           "outside_cells": len(outside), "escaped": info.escaped})
    return replace(cs, kind="invariant" if invariant else "variant", details=details)


def transition_graph(sys: ControlAffineSystem, alpha: float, grid: Grid, step_T: float = STEP_T,
                     tol: float = TOL_GRID, refine: int = 1):
    """Sparse adjacency of the uncontrolled time-``step_T`` map on ``grid`` refined ``refine`` times.

    Every node launches from its representative points and links to the
    cells holding the end points.  Returns ``(matrix, graph_grid)``.
    """
    if not step_T > 0:
        raise ValueError("step_T must be positive")
    g = refined(grid, refine)
    src = np.arange(g.size)
    reps = g.representatives(src)
    R = reps.shape[1]
    X0 = reps.reshape(-1, grid.d)
    U0 = np.zeros((1, sys.m))
    X1 = np.empty_like(X0)
    status = np.empty(len(X0), dtype=np.int8)
    for lo in range(0, len(X0), 65536):
        X1[lo:lo + 65536], status[lo:lo + 65536] = dopri_batch(
            lambda idx, Y: sys.vector_field_batch(alpha, Y, U0), X0[lo:lo + 65536], step_T, tol)
    dst, inside = g.flat_index(X1)
    keep = inside & (status == 0)
    rows = np.repeat(src, R)[keep]
    cols = dst[keep]
    A = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(g.size, g.size))
    return A.tocsr(), g


def chain_transitive_cells(sys: ControlAffineSystem, alpha: float, grid: Grid,
                           step_T: float = STEP_T, tol: float = TOL_GRID,
                           refine: int = CHAIN_REFINE) -> list[CellSet]:
    """Approximate maximal chain transitive sets of the uncontrolled flow.

    The time-``step_T`` map is discretized on ``grid`` refined ``refine``
    times.  Nodes of strongly connected components with more than one node,
    or with a self-loop, are recurrent.  Their output cells are then grouped
    into touching clusters: a one-cell jump is below the resolution of the
    discretization, so recurrent pieces that touch are chained together.
    Clusters are sorted by decreasing size, then by smallest cell index.
    """
    A, g = transition_graph(sys, alpha, grid, step_T, tol, refine)
    n, labels = connected_components(A, directed=True, connection="strong")
    sizes = np.bincount(labels, minlength=n)
    self_loop = np.zeros(n, dtype=bool)
    self_loop[labels[A.diagonal() > 0]] = True
    recurrent = ((sizes > 1) | self_loop)[labels]
    parent, _ = grid.flat_index(g.centers(np.flatnonzero(recurrent)))
    bitmap = grid.from_flat(parent).bitmap
    clusters, k = ndimage.label(bitmap, ndimage.generate_binary_structure(grid.d, grid.d))
    flat = clusters.reshape(-1)
    comps = [grid.from_flat(np.flatnonzero(flat == lab)) for lab in range(1, k + 1)]
    comps.sort(key=lambda c: (-len(c), int(c.flat()[0])))
    return comps
