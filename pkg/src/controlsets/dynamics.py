"""Control-affine systems and their trajectories.

A system is ``x' = f0(alpha, x) + sum_i u_i f_i(alpha, x)`` with piecewise
constant controls taking values in the box ``rho * U``.  Integration uses the
Dormand-Prince 5(4) pair with the mixed error test
``err <= tol * (1 + |x|)``; a batched variant advances many trajectories with
independent step sizes, which is what the grid algorithms run on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from . import expr as ex
from .errors import Divergence, EvalDomainError, StepSizeUnderflow

OVERFLOW_GUARD = 1e8
TOL_ANALYSIS = 1e-9
TOL_GRID = 1e-6

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass(frozen=True, eq=False)
class ControlAffineSystem:
    """Parameter-dependent control-affine vector field.

    ``drift`` holds ``d`` expressions, ``control_fields`` holds ``m`` tuples of
    ``d`` expressions, and ``lo``/``hi`` describe the unscaled control box
    ``U``; the admissible range at scale ``rho`` is ``rho * U``.
    """

    state_names: tuple
    drift: tuple
    control_fields: tuple
    lo: tuple
    hi: tuple
    param: str = "alpha"
    name: str = "system"
    # original expression text, kept so configs can be written back verbatim
    source: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        d = len(self.state_names)
        if d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {d}")
        if len(self.drift) != d:
            raise ValueError("drift must have one expression per state")
        if len(self.control_fields) < 1:
            raise ValueError("at least one control channel is required")
        for g in self.control_fields:
            if len(g) != d:
                raise ValueError("each control field needs one expression per state")
        if not (len(self.lo) == len(self.hi) == len(self.control_fields)):
            raise ValueError("range bounds must match the number of control channels")
        for a, b in zip(self.lo, self.hi):
            if not a < 0.0 < b:
                raise ValueError("0 must be interior to U (need lo < 0 < hi per channel)")
        allowed = set(self.state_names) | {self.param}
        for e in self.fields_flat():
            bad = e.variables() - allowed
            if bad:
                raise ex.UnknownIdentifier(sorted(bad)[0])

    @classmethod
    def from_strings(cls, state_names, drift, control_fields, lo, hi, param="alpha", name="system"):
        names = tuple(state_names) + (param,)
        return cls(
            state_names=tuple(state_names),
            drift=tuple(ex.parse(s, names) for s in drift),
            control_fields=tuple(tuple(ex.parse(s, names) for s in g) for g in control_fields),
            lo=tuple(float(v) for v in lo),
            hi=tuple(float(v) for v in hi),
            param=param,
            name=name,
            source={"drift": tuple(drift), "control_fields": tuple(tuple(g) for g in control_fields)},
        )

    @property
    def d(self) -> int:
        return len(self.state_names)

    @property
    def m(self) -> int:
        return len(self.control_fields)

    @property
    def variables(self) -> tuple:
        return tuple(self.state_names) + (self.param,)

    def fields_flat(self):
        yield from self.drift
        for g in self.control_fields:
            yield from g

    def control_box(self, rho: float):
        return rho * np.asarray(self.lo), rho * np.asarray(self.hi)

    def in_range(self, u, rho: float, slack: float = 1e-12) -> bool:
        lo, hi = self.control_box(rho)
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= lo - slack * rho) and np.all(u <= hi + slack * rho))

    def default_controls(self, rho: float) -> np.ndarray:
        """Extremes and zero per channel: ``{rho*lo, 0, rho*hi}^m``."""
        lo, hi = self.control_box(rho)
        axes = [np.array([lo[i], 0.0, hi[i]]) for i in range(self.m)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    # -- compiled callables -------------------------------------------------

    @cached_property
    def _drift_fns(self):
        return [ex.compile_expr(e, self.variables) for e in self.drift]

    @cached_property
    def _control_fns(self):
        return [[ex.compile_expr(e, self.variables) for e in g] for g in self.control_fields]

    @cached_property
    def _control_constant(self):
        return all(not e.variables() for g in self.control_fields for e in g)

    @cached_property
    def jacobian_exprs(self):
        """``d x d`` nested tuple of symbolic partials of the drift."""
        return tuple(tuple(ex.diff(f, v) for v in self.state_names) for f in self.drift)

    @cached_property
    def _jacobian_fns(self):
        return [[ex.compile_expr(e, self.variables) for e in row] for row in self.jacobian_exprs]

    @cached_property
    def dalpha_exprs(self):
        return tuple(ex.diff(f, self.param) for f in self.drift)

    def _eval_columns(self, fns, X, alpha):
        cols = [X[..., i] for i in range(self.d)]
        shape = X.shape[:-1]
        out = np.empty(X.shape[:-1] + (len(fns),))
        for j, fn in enumerate(fns):
            out[..., j] = np.broadcast_to(fn(*cols, alpha), shape)
        return out

    def drift_batch(self, alpha: float, X: np.ndarray) -> np.ndarray:
        with np.errstate(all="ignore"):
            return self._eval_columns(self._drift_fns, X, alpha)

    def vector_field_batch(self, alpha: float, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        """Evaluate the controlled field on a batch: ``X`` is ``(N, d)``, ``U`` is ``(N, m)`` or ``(m,)``."""
        with np.errstate(all="ignore"):
            F = self._eval_columns(self._drift_fns, X, alpha)
            U = np.asarray(U, dtype=float)
            for i, fns in enumerate(self._control_fns):
                ui = U[..., i]
                G = self._eval_columns(fns, X, alpha)
                F += ui[..., None] * G if np.ndim(ui) else ui * G
        return F

    def jacobian(self, alpha: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        env = dict(zip(self.state_names, x))
        env[self.param] = alpha
        return np.array([[ex.evaluate(e, env) for e in row] for row in self.jacobian_exprs])

    def env(self, alpha: float, x) -> dict:
        env = {n: float(v) for n, v in zip(self.state_names, x)}
        env[self.param] = float(alpha)
        return env


def rhs(sys: ControlAffineSystem, alpha: float, x, u, rho: float | None = None) -> np.ndarray:
    """``f0(alpha, x) + sum_i u_i f_i(alpha, x)``, evaluated exactly (domain errors raise)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (sys.m,):
        raise ValueError(f"control must have {sys.m} components")
    if rho is not None and not sys.in_range(u, rho):
        raise ValueError(f"control {u.tolist()} outside U^rho for rho={rho}")
    env = sys.env(alpha, x)
    out = np.array([ex.evaluate(e, env) for e in sys.drift])
    for ui, g in zip(u, sys.control_fields):
        if ui != 0.0:
            out = out + ui * np.array([ex.evaluate(e, env) for e in g])
    return out


@dataclass(frozen=True)
class ControlFunction:
    """Piecewise-constant control: ``schedule`` is a tuple of ``(duration, value)``.

    The empty schedule is ``u = 0``; past the end of the schedule the control is zero.
    """

    schedule: tuple = ()

    def __post_init__(self):
        sched = tuple((float(dt), tuple(float(v) for v in np.atleast_1d(val)))
                      for dt, val in self.schedule)
        for dt, _ in sched:
            if not dt > 0.0:
                raise ValueError("segment durations must be positive")
        object.__setattr__(self, "schedule", sched)

    @classmethod
    def constant(cls, value, duration):
        return cls(((duration, value),))

    @property
    def total_duration(self) -> float:
        return float(sum(dt for dt, _ in self.schedule))

    def check_range(self, sys: ControlAffineSystem, rho: float) -> bool:
        return all(sys.in_range(v, rho) for _, v in self.schedule)

    def segments(self, T: float, m: int):
        """Yield ``(t_start, t_end, value)`` covering ``[0, T]``."""
        t = 0.0
        slack = 1e-12 * max(T, 1.0)  # round-off in summed durations
        for dt, val in self.schedule:
            if t >= T - slack:
                return
            end = t + dt
            if end >= T - slack:
                end = T
            yield t, end, np.asarray(val)
            t = end
        if t < T - slack:
            yield t, T, np.zeros(m)

    def value_at(self, t: float, m: int) -> np.ndarray:
        acc = 0.0
        for dt, val in self.schedule:
            acc += dt
            if t < acc:
                return np.asarray(val)
        return np.zeros(m)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Accepted integration steps with cubic Hermite dense output.

    ``times`` is elapsed integration time starting at 0.  For reversed
    trajectories the physical time is ``-times``.  ``slopes[k]`` holds the
    derivatives (with respect to elapsed time) at the start and end of step
    ``k``; they differ from their neighbours only at control breakpoints.
    """

    times: np.ndarray
    states: np.ndarray
    slopes: np.ndarray
    alpha: float
    controls_applied: ControlFunction = ControlFunction()
    reversed: bool = False

    def __len__(self):
        return len(self.times)

    @property
    def end(self) -> np.ndarray:
        return self.states[-1]

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def at(self, t) -> np.ndarray:
        """Dense output at elapsed time(s) ``t``."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        k = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        t0, t1 = self.times[k], self.times[k + 1]
        h = t1 - t0
        s = ((t - t0) / h)[:, None]
        y0, y1 = self.states[k], self.states[k + 1]
        d0, d1 = self.slopes[k, 0] * h[:, None], self.slopes[k, 1] * h[:, None]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        out = h00 * y0 + h10 * d0 + h01 * y1 + h11 * d1
        return out[0] if scalar else out

    def sample(self, spacing: float) -> np.ndarray:
        """States at roughly uniform arc-length ``spacing`` (always includes both ends)."""
        pts = [self.states[0]]
        for i in range(len(self.times) - 1):
            seg = np.linalg.norm(self.states[i + 1] - self.states[i])
            n = int(np.ceil(seg / spacing))
            if n > 1:
                ts = self.times[i] + (self.times[i + 1] - self.times[i]) * np.arange(1, n) / n
                pts.extend(self.at(ts))
            pts.append(self.states[i + 1])
        return np.array(pts)

    def truncated(self, n: int) -> "Trajectory":
        return Trajectory(self.times[:n], self.states[:n], self.slopes[:n - 1], self.alpha,
                          self.controls_applied, self.reversed)


# ---------------------------------------------------------------------------
# integration core


def _initial_step(f0, x, T, tol):
    d0 = np.max(np.abs(x), axis=-1) + 1.0
    d1 = np.max(np.abs(f0), axis=-1)
    with np.errstate(divide="ignore"):
        h = np.where(d1 > 1e-12, 0.01 * (tol ** 0.2) * d0 / d1, T)
    return np.minimum(h, T)


def _step(fun, x, h, k1):
    """One Dormand-Prince step for a batch; returns (x5, k7, err_vector)."""
    ks = [k1]
    hc = h[:, None]
    for s in range(1, 7):
        acc = x.copy()
        for j, a in enumerate(_A[s]):
            if a != 0.0:
                acc += hc * (a * ks[j])
        ks.append(fun(acc))
    x5 = acc  # row 6 of the tableau equals the 5th-order weights
    err = hc * sum(_E[j] * ks[j] for j in range(7) if _E[j] != 0.0)
    return x5, ks[6], err


def dopri_batch(fun: Callable, X0: np.ndarray, T: float, tol: float,
                on_step: Callable | None = None, max_steps: int = 200000):
    """Advance every row of ``X0`` by ``T`` with individual adaptive steps.

    ``fun(idx, X)`` evaluates the field for the rows ``idx``.  ``on_step`` is
    called with ``(idx, t0, h, x0, x1, k0, k1)`` for every batch of accepted steps.
    Returns ``(X, status)`` with status 0 = done, 1 = diverged, 2 = step underflow.
    """
    X = np.array(X0, dtype=float, copy=True)
    N = X.shape[0]
    t = np.zeros(N)
    status = np.zeros(N, dtype=np.int8)
    all_idx = np.arange(N)
    K = fun(all_idx, X)
    h = _initial_step(K, X, T, tol)
    active = np.isfinite(K).all(axis=1) & np.isfinite(X).all(axis=1)
    status[~active] = 1
    hmin = 1e-14 * T
    for _ in range(max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        x, k1 = X[idx], K[idx]
        hi = np.minimum(h[idx], T - t[idx])
        last = hi >= T - t[idx]
        fsub = lambda Y, _idx=idx: fun(_idx, Y)  # noqa: E731
        x5, k7, err = _step(fsub, x, hi, k1)
        with np.errstate(all="ignore"):
            scale = tol * (1.0 + np.maximum(np.max(np.abs(x), axis=1), np.max(np.abs(x5), axis=1)))
            ratio = np.max(np.abs(err), axis=1) / scale
        finite = np.isfinite(ratio) & np.isfinite(x5).all(axis=1) & np.isfinite(k7).all(axis=1)
        ok = finite & (ratio <= 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(ratio > 0, 0.9 * ratio ** -0.2, 5.0)
        fac = np.clip(np.nan_to_num(fac, nan=0.2), 0.2, 5.0)
        fac = np.where(ok, fac, np.minimum(fac, 1.0))
        fac = np.where(finite, fac, 0.25)
        if ok.any():
            a = idx[ok]
            if on_step is not None:
                on_step(a, t[a], hi[ok], x[ok], x5[ok], k1[ok], k7[ok])
            X[a] = x5[ok]
            K[a] = k7[ok]
            t[a] = np.where(last[ok], T, t[a] + hi[ok])
            done = last[ok]
            blown = np.max(np.abs(x5[ok]), axis=1) > OVERFLOW_GUARD
            active[a[done]] = False
            active[a[blown]] = False
            status[a[blown]] = 1
        h[idx] = hi * fac
        under = h[idx] < hmin
        if under.any():
            bad = idx[under & active[idx]]
            active[bad] = False
            status[bad] = 2
    else:
        status[active] = 2
    return X, status


def integrate(sys: ControlAffineSystem, alpha: float, x0, u: ControlFunction | None = None,
              T: float = 1.0, tol: float = TOL_ANALYSIS, reversed: bool = False,
              rho: float | None = None, stop: Callable | None = None,
              mesh: np.ndarray | None = None) -> Trajectory:
    """Integrate one trajectory over ``[0, T]`` (elapsed time).

    Steps never straddle a breakpoint of the control schedule.  With
    ``reversed=True`` the field is negated.  ``stop(x)`` may end the
    integration early after any accepted step (the step's end state is kept).
    ``mesh`` replays a fixed step sequence without error control, which makes
    the result a smooth function of ``x0`` (used for finite-difference
    Jacobians).

    Raises :class:`Divergence` when ``|x|`` exceeds the overflow guard and
    :class:`StepSizeUnderflow` when the step drops below ``1e-14 * T``.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    u = u if u is not None else ControlFunction()
    if rho is not None and not u.check_range(sys, rho):
        raise ValueError("control schedule leaves U^rho")
    sign = -1.0 if reversed else 1.0
    x = np.asarray(x0, dtype=float).reshape(1, sys.d)
    times, states, slopes = [0.0], [x[0].copy()], []
    stopped = False

    for t_start, t_end, val in u.segments(T, sys.m):
        Uv = np.asarray(val, dtype=float)

        def fun(_idx, Y, Uv=Uv):
            return sign * sys.vector_field_batch(alpha, Y, Uv)

        k = fun(None, x)
        if not np.isfinite(k).all():
            raise EvalDomainError(f"vector field not finite at {x[0].tolist()}")
        span = t_end - t_start
        if mesh is not None:
            sub = mesh[(mesh > t_start) & (mesh < t_end)]
            grid = np.concatenate([[t_start], sub, [t_end]])
            for a, b in zip(grid[:-1], grid[1:]):
                x5, k7, _ = _step(lambda Y: fun(None, Y), x, np.array([b - a]), k)
                if not np.isfinite(x5).all() or np.max(np.abs(x5)) > OVERFLOW_GUARD:
                    raise Divergence(f"trajectory left the overflow guard near t={b:.6g}")
                slopes.append((k[0], k7[0]))
                x, k = x5, k7
                times.append(b)
                states.append(x[0].copy())
            continue

        # adaptive stepping for this segment
        h = float(_initial_step(k, x, span, tol)[0])
        t = t_start
        hmin = 1e-14 * T
        while t < t_end:
            hi = min(h, t_end - t)
            last = hi >= t_end - t
            x5, k7, err = _step(lambda Y: fun(None, Y), x, np.array([hi]), k)
            with np.errstate(all="ignore"):
                scale = tol * (1.0 + max(np.max(np.abs(x)), np.max(np.abs(x5))))
                ratio = float(np.max(np.abs(err)) / scale)
            if not (np.isfinite(ratio) and np.isfinite(x5).all()):
                ratio = np.inf
            if ratio <= 1.0:
                t = t_end if last else t + hi
                slopes.append((k[0], k7[0]))
                x, k = x5, k7
                times.append(t)
                states.append(x[0].copy())
                if np.max(np.abs(x)) > OVERFLOW_GUARD:
                    raise Divergence(f"trajectory left the overflow guard near t={t:.6g}")
                if stop is not None and stop(x[0]):
                    stopped = True
                    break
                fac = 5.0 if ratio == 0 else min(5.0, max(0.2, 0.9 * ratio ** -0.2))
            else:
                fac = 0.25 if not np.isfinite(ratio) else min(1.0, max(0.2, 0.9 * ratio ** -0.2))
            h = hi * fac
            if h < hmin:
                raise StepSizeUnderflow(f"step size {h:.3g} below {hmin:.3g} at t={t:.6g}")
        if stopped:
            break

    return Trajectory(np.array(times), np.array(states), np.array(slopes).reshape(-1, 2, sys.d),
                      float(alpha),
                      u, bool(reversed))
