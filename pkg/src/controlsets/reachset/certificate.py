"""Controlled periodic orbits through a given point of a control set.

A breadth-first search over sampled constant controls finds a closed path of
actual trajectory pieces that starts at ``y``, passes close to the saddle and
comes back to the cell of ``y`` without leaving the control set.  A bounded
least-squares shooting step on the final segments then closes the loop
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from ..analysis.geometry import hausdorff
from ..dynamics import TOL_GRID, ControlAffineSystem, ControlFunction, Trajectory, dopri_batch, integrate
from ..errors import NoClosedPath, ShootingFailed, TubeExceeded
from .expand import MAX_EXTEND, STEP_T, refined, sample_controls
from .grid import Grid
from .sets import ControlSetResult

CLOSURE_TOL = 1e-6
SHOOT_TOL = 1e-11
SADDLE_RADIUS = 0.02
MAX_LEVELS = 400
TAIL_LENGTHS = (2, 4, 8, 16, 32)


@dataclass(frozen=True, eq=False)
class OrbitCertificate:
    """Closed controlled trajectory ``trajectory`` driven by ``control`` from ``y``.

    ``closure`` is the distance between the end point and ``y`` after
    re-integrating ``control``; ``hausdorff`` is measured against the
    reference loop plus the saddle.
    """

    trajectory: Trajectory
    control: ControlFunction
    closure: float
    hausdorff: float
    period: float
    details: dict = field(default_factory=dict)


class _PathMonitor:
    """Tracks, per row, the closest approach to the saddle and whether a step left the tube."""

    def __init__(self, n, saddle, tube: np.ndarray, grid: Grid):
        self.saddle = saddle
        self.tube = tube
        self.grid = grid
        self.closest = np.full(n, np.inf)
        self.outside = np.zeros(n, dtype=bool)

    def __call__(self, idx, t0, h, x0, x1, k0, k1):
        d = np.minimum(np.linalg.norm(x0 - self.saddle, axis=1), np.linalg.norm(x1 - self.saddle, axis=1))
        self.closest[idx] = np.minimum(self.closest[idx], d)
        flat, inside = self.grid.flat_index(x1)
        self.outside[idx] |= ~(inside & self.tube[flat])


def _search(sys, alpha, rho, grid, cs, y, saddle, step_T, controls, tol, refine, saddle_radius,
            max_levels, max_extend):
    """Shortest (in segments) closed path of controlled pieces; returns the schedule."""
    C = sample_controls(sys, rho, controls)
    fine = refined(grid, refine)
    tube = cs.cells.dilate(1).bitmap.reshape(-1)
    allowed = cs.cells.bitmap.reshape(-1)
    goal = grid.cell_of(y)
    # node = fine cell * 2 + (saddle passed)
    seen = np.zeros(2 * fine.size, dtype=bool)
    parents, segs = [-1], [None]
    X = np.asarray(y, dtype=float).reshape(1, -1)
    node_ids = np.array([0])
    flags = np.array([False])
    seen[2 * fine.flat_index(X)[0][0]] = True
    for level in range(max_levels):
        if len(X) == 0:
            break
        rows = np.repeat(np.arange(len(X)), len(C))
        Xs = X[rows].copy()
        U = np.tile(C, (len(X), 1))
        periods = np.zeros(len(Xs), dtype=np.int64)
        mon = _PathMonitor(len(Xs), saddle, tube, grid)
        home, _ = fine.flat_index(Xs)
        live = np.arange(len(Xs))
        done = np.zeros(len(Xs), dtype=bool)
        for _ in range(max_extend + 1):
            def fun(idx, Y, live=live):
                return sys.vector_field_batch(alpha, Y, U[live[idx]])

            def step(idx, *a, live=live):
                mon(live[idx], *a)

            Xn, status = dopri_batch(fun, Xs[live], step_T, tol, on_step=step)
            Xs[live] = Xn
            periods[live] += 1
            flat, inside = fine.flat_index(Xn)
            ok = (status == 0) & inside
            done[live[~ok]] = True
            # slow pieces that stay in their launch cell are continued
            stay = ok & (flat == home[live])
            done[live[ok & ~stay]] = True
            live = live[stay]
            if live.size == 0:
                break
        flat, inside = fine.flat_index(Xs)
        coarse, _ = grid.flat_index(Xs)
        good = inside & done & ~mon.outside & allowed[coarse]
        good &= np.isfinite(Xs).all(axis=1)
        new_flags = flags[rows] | (mon.closest <= saddle_radius)
        hits = np.flatnonzero(good & new_flags & (coarse == goal))
        if hits.size:
            best = hits[np.argmin(np.linalg.norm(Xs[hits] - y, axis=1))]
            sched = [(periods[best] * step_T, tuple(U[best]))]
            node = node_ids[rows[best]]
            while node > 0:
                sched.append(segs[node])
                node = parents[node]
            return sched[::-1], level + 1, Xs[best]
        key = 2 * flat + new_flags
        nxt_X, nxt_ids, nxt_flags = [], [], []
        for r in np.flatnonzero(good):
            if seen[key[r]]:
                continue
            seen[key[r]] = True
            parents.append(int(node_ids[rows[r]]))
            segs.append((periods[r] * step_T, tuple(U[r])))
            nxt_X.append(Xs[r])
            nxt_ids.append(len(parents) - 1)
            nxt_flags.append(new_flags[r])
        X = np.array(nxt_X).reshape(-1, grid.d)
        node_ids = np.array(nxt_ids, dtype=np.int64)
        flags = np.array(nxt_flags, dtype=bool)
    raise NoClosedPath("no path through the saddle region returns to the cell of y inside the set")


def _tail_ends(sys, alpha, x0, vals, durs, tol):
    """End points of many tails from ``x0``; ``vals`` is ``(n, K, m)``, ``durs`` is ``(n, K)``.

    Each segment is integrated in rescaled time ``s = t / duration`` so that
    rows with different durations share one batch.
    """
    n, K, _ = vals.shape
    X = np.repeat(np.asarray(x0, dtype=float)[None, :], n, axis=0)
    ok = np.ones(n, dtype=bool)
    for k in range(K):
        def fun(idx, Y, k=k):
            return durs[idx, k, None] * sys.vector_field_batch(alpha, Y, vals[idx, k])

        X, status = dopri_batch(fun, X, 1.0, tol)
        ok &= status == 0
    X[~ok] = np.nan
    return X


def _gauss_newton(F, theta, lower, upper, target, max_iter=100, damping=1e-3):
    """Bounded Gauss-Newton for the underdetermined system ``F(theta) = target``.

    ``F`` maps a stack of parameter vectors to a stack of end points.  Each
    step solves the linearized problem inside the box with a small Tikhonov
    term, which picks a short step among the many exact ones, then
    backtracks until the residual drops.
    """
    P = len(theta)
    span = upper - lower
    fd = 1e-7 * span
    r = F(theta[None, :])[0] - target
    r0 = np.linalg.norm(r)
    for _ in range(max_iter):
        if not np.all(np.isfinite(r)) or np.linalg.norm(r) < 1e-12:
            break
        E = F(theta[None, :] + np.diag(fd))
        # Jacobian with respect to parameters normalized by their spans
        J = (E - target - r[None, :]).T / fd[None, :] * span[None, :]
        # damping fades as the residual shrinks
        mu = damping * np.linalg.norm(J, 2) * min(1.0, np.linalg.norm(r) / r0)
        A = np.vstack([J, mu * np.eye(P)])
        b = np.concatenate([-r, np.zeros(P)])
        zl, zu = (lower - theta) / span, (upper - theta) / span
        step = lsq_linear(A, b, bounds=(np.minimum(zl, 0.0), np.maximum(zu, 0.0))).x * span
        lam = 1.0
        while lam > 1.0 / 256:
            trial = np.clip(theta + lam * step, lower, upper)
            rt = F(trial[None, :])[0] - target
            if np.all(np.isfinite(rt)) and np.linalg.norm(rt) < np.linalg.norm(r):
                break
            lam *= 0.5
        else:
            break
        theta, r = trial, rt
    return theta, float(np.linalg.norm(r)) if np.all(np.isfinite(r)) else np.inf


def _shoot(sys, alpha, rho, y, sched, tol, tail_lengths):
    """Adjust values and durations of the last segments so the path ends at ``y``."""
    lo, hi = sys.control_box(rho)
    m = sys.m
    best = np.inf
    for K in tail_lengths:
        K = min(K, len(sched))
        head, tail = sched[:-K], sched[-K:]
        x0 = np.asarray(y, dtype=float)
        if head:
            x0 = integrate(sys, alpha, y, ControlFunction(tuple(head)),
                           T=float(sum(d for d, _ in head)), tol=tol).end
        d0 = np.array([d for d, _ in tail])
        v0 = np.array([v for _, v in tail]).reshape(K, m)
        theta0 = np.concatenate([v0.ravel(), d0])
        lower = np.concatenate([np.tile(lo, K), 0.5 * d0])
        upper = np.concatenate([np.tile(hi, K), 1.5 * d0])

        def F(Th, K=K, x0=x0):
            return _tail_ends(sys, alpha, x0, Th[:, :K * m].reshape(-1, K, m), Th[:, K * m:], tol)

        theta, err = _gauss_newton(F, np.clip(theta0, lower, upper), lower, upper, y)
        best = min(best, err)
        if err < CLOSURE_TOL / 10:
            vals = theta[:K * m].reshape(K, m)
            durs = theta[K * m:]
            return list(head) + [(float(d), tuple(v)) for d, v in zip(durs, vals)], K
        if K == len(sched):
            break
    raise ShootingFailed(f"closest closure {best:.3g} is above {CLOSURE_TOL / 10:g}")


def periodic_orbit_certificate(sys: ControlAffineSystem, alpha: float, rho: float, grid: Grid,
                               cs: ControlSetResult, y, delta: float, reference=None, saddle=None,
                               step_T: float = STEP_T, controls=None, tol: float = TOL_GRID,
                               shoot_tol: float = SHOOT_TOL, refine: int = 4,
                               saddle_radius: float = SADDLE_RADIUS, max_levels: int = MAX_LEVELS,
                               max_extend: int = MAX_EXTEND,
                               tail_lengths=TAIL_LENGTHS) -> OrbitCertificate:
    """Periodic controlled trajectory through ``y`` that follows the loop of ``cs`` within ``delta``.

    ``reference`` holds sample points of the loop and ``saddle`` the saddle
    location; both default to ``cs.details["reference"]`` and
    ``cs.details["saddle"]``.  The search uses integration tolerance ``tol``
    and the shooting ``shoot_tol``.

    Raises
    ------
    NoClosedPath
        No closed path through the saddle region exists at this resolution.
    ShootingFailed
        The tail correction could not close the loop within ``1e-7``.
    TubeExceeded
        The closed orbit is farther than ``delta`` from the loop plus saddle,
        or it leaves ``cs`` dilated by one cell.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if cs.cells.grid != grid:
        raise ValueError("control set lives on a different grid")
    ref = cs.details.get("reference") if reference is None else reference
    sad = cs.details.get("saddle") if saddle is None else saddle
    if ref is None or sad is None:
        raise ValueError("reference loop samples and the saddle location are required")
    ref = np.asarray(ref, dtype=float).reshape(-1, grid.d)
    sad = np.asarray(sad, dtype=float).reshape(grid.d)
    y = np.asarray(y, dtype=float).reshape(grid.d)
    if not cs.cells.contains_point(y):
        raise ValueError("y must lie in the control set")
    if not cs.cells.contains_point(sad):
        raise ValueError("the control set must contain the saddle cell")

    sched, levels, _ = _search(sys, alpha, rho, grid, cs, y, sad, step_T, controls, tol, refine,
                               saddle_radius, max_levels, max_extend)
    sched, K = _shoot(sys, alpha, rho, y, sched, shoot_tol, tail_lengths)
    u = ControlFunction(tuple(sched))
    if not u.check_range(sys, rho):
        raise ShootingFailed("corrected control left U^rho")
    period = u.total_duration
    traj = integrate(sys, alpha, y, u, T=period, tol=shoot_tol)
    closure = float(np.linalg.norm(traj.end - y))
    if closure >= CLOSURE_TOL:
        raise ShootingFailed(f"re-integrated closure {closure:.3g} is above {CLOSURE_TOL:g}")
    pts = traj.sample(0.25 * float(np.min(grid.edges)))
    dist = hausdorff(pts, np.vstack([ref, sad]))
    details = {"segments": len(sched), "search_levels": levels, "shooting_tail": K,
               "tube_inside": bool(cs.cells.dilate(1).contains_points(pts).all())}
    if not details["tube_inside"]:
        raise TubeExceeded("the closed orbit leaves the control set")
    if dist > delta:
        raise TubeExceeded(f"Hausdorff distance {dist:.3g} to the loop exceeds delta={delta:g}")
    return OrbitCertificate(traj, u, closure, dist, period, details)
