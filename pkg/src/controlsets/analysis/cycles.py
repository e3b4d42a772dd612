"""Limit cycles through Newton's method on the Poincare return map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dynamics import ControlAffineSystem, Trajectory, integrate
from ..errors import Divergence, NoConvergence, NoCrossing, NoReturn, StepSizeUnderflow
from .manifolds import CrossSection, _in_box, first_crossing

MAP_TOL = 1e-11
FD_STEP = 1e-7
CYCLE_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class LimitCycleResult:
    samples: Trajectory
    period: float
    floquet_multipliers: np.ndarray
    stable: bool
    section_coords: np.ndarray
    iterations: int = 0

    @property
    def points(self) -> np.ndarray:
        return self.samples.states


@dataclass(frozen=True, eq=False)
class _Return:
    time: float
    point: np.ndarray
    coords: np.ndarray
    traj: Trajectory


def return_map(sys: ControlAffineSystem, alpha: float, section: CrossSection, q,
               t_max: float = 100.0, tol: float = MAP_TOL, window=None, mesh=None) -> _Return:
    """First return to ``section`` of the trajectory through ``section.point(q)``.

    Returns are counted when the trajectory crosses in the flow direction at
    the section base and lands within the halfwidth.  ``mesh`` replays a fixed
    step sequence (see :func:`integrate`).
    """
    direction = section.flow_sign(sys, alpha)
    x0 = section.point(q)
    if mesh is not None:
        try:
            traj = integrate(sys, alpha, x0, T=float(mesh[-1]), tol=tol, mesh=mesh)
        except (Divergence, StepSizeUnderflow) as exc:
            raise NoReturn(str(exc)) from None
    else:
        state = {"prev": direction, "left": False}
        hw = section.halfwidth

        def stop(x):
            s = section.offset(x)
            hit = False
            if direction * state["prev"] < 0 <= direction * s:
                # approximate landing point to skip crossings far outside the halfwidth
                hit = bool(np.all(np.abs(section.coords(x)) <= 1.5 * hw + 0.1))
            state["prev"] = s
            if window is not None and not _in_box(x, window):
                state["left"] = True
                return True
            return hit

        try:
            traj = integrate(sys, alpha, x0, T=t_max, tol=tol, stop=stop)
        except (Divergence, StepSizeUnderflow) as exc:
            raise NoReturn(str(exc)) from None
        if state["left"]:
            raise NoReturn("trajectory left the window before returning")
    try:
        t, p, c = first_crossing(traj, section, direction, t_min=1e-9)
    except NoCrossing:
        raise NoReturn(f"no return to the section within t_max={t_max}") from None
    return _Return(t, p, c, traj)


def _replay_mesh(traj: Trajectory, t_ret: float) -> np.ndarray:
    times = traj.times
    k = int(np.searchsorted(times, t_ret))
    mesh = times[1:k + 1].copy()
    h = times[min(k, len(times) - 1)] - times[max(k - 1, 0)]
    ext = mesh[-1] + h * np.arange(1, 4)
    return np.concatenate([mesh, ext])


def return_map_jacobian(sys, alpha, section, q, nominal: _Return, step: float = FD_STEP,
                        tol: float = MAP_TOL) -> np.ndarray:
    """Central finite-difference Jacobian of the return map in section coordinates.

    Perturbed trajectories replay the nominal step sequence so the difference
    quotient is not polluted by step-size selection noise.
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    mesh = _replay_mesh(nominal.traj, nominal.time)
    n = len(q)
    J = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        plus = return_map(sys, alpha, section, q + e, tol=tol, mesh=mesh).coords
        minus = return_map(sys, alpha, section, q - e, tol=tol, mesh=mesh).coords
        J[:, i] = (plus - minus) / (2 * step)
    return J


def find_limit_cycle(sys: ControlAffineSystem, alpha: float, section: CrossSection, seed,
                     t_max: float = 100.0, tol: float = MAP_TOL, window=None,
                     max_iter: int = 30, map_tol: float = 1e-9) -> LimitCycleResult:
    """Fixed point of the return map by damped Newton, starting from ``seed`` on the section.

    Raises :class:`NoReturn` when the seed does not come back to the section
    and :class:`NoConvergence` when Newton stalls.
    """
    q = np.atleast_1d(section.coords(np.asarray(seed, dtype=float)))
    cur = return_map(sys, alpha, section, q, t_max, tol, window)
    g = cur.coords - q
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(g) < map_tol:
            break
        DP = return_map_jacobian(sys, alpha, section, q, cur, tol=tol)
        try:
            dq = np.linalg.solve(DP - np.eye(len(q)), -g)
        except np.linalg.LinAlgError:
            raise NoConvergence("return map derivative has a unit eigenvalue") from None
        lam = 1.0
        while True:
            qt = q + lam * dq
            try:
                trial = return_map(sys, alpha, section, qt, t_max, tol, window)
                gt = trial.coords - qt
                if np.linalg.norm(gt) < np.linalg.norm(g):
                    break
            except NoReturn:
                pass
            lam *= 0.5
            if lam < 1.0 / 64:
                raise NoConvergence("damped Newton on the return map stalled")
        q, cur, g = qt, trial, gt
    else:
        if np.linalg.norm(g) >= map_tol:
            raise NoConvergence(f"return map residual {np.linalg.norm(g):.3g} after {max_iter} iterations")

    DP = return_map_jacobian(sys, alpha, section, q, cur, tol=tol)
    mult = np.linalg.eigvals(DP)
    period = float(cur.time)
    samples = integrate(sys, alpha, section.point(q), T=period, tol=tol)
    if np.linalg.norm(samples.states[0] - samples.states[-1]) >= CYCLE_TOL:
        raise NoConvergence("cycle does not close to the required tolerance")
    return LimitCycleResult(samples, period, mult, bool(np.all(np.abs(mult) < 1.0)), q, it)
