"""Invariant manifold legs, homoclinic orbits, Melnikov integral and split function."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import minimize_scalar

from .. import expr as ex
from ..dynamics import ControlAffineSystem, Trajectory, integrate
from ..errors import (Divergence, LeftWindowImmediately, NoCrossing, NoHyperbolicSplit,
                      NotTransverse, StepSizeUnderflow, TailNotDecayed)
from .equilibria import EquilibriumReport, find_equilibrium

EPS_MANIFOLD = 1e-5
# legs near the saddle amplify local error in reversed time; tighter than TOL_ANALYSIS
LEG_TOL = 1e-11
WEIGHT_FLOOR = 1e-12
TAIL_TOL = 1e-8


def _in_box(x, window, pad=0.0):
    lo, hi = window
    return bool(np.all(x >= np.asarray(lo) - pad) and np.all(x <= np.asarray(hi) + pad))


def manifold_direction(eq: EquilibriumReport, which: str):
    """Unit eigenvector and eigenvalue spanning the requested one-dimensional manifold.

    For stable legs in 3D the leading (weakest) stable direction is used.
    The sign is fixed so that the largest component is positive.
    """
    if not eq.is_hyperbolic:
        raise NoHyperbolicSplit("equilibrium is not hyperbolic")
    w, V = eq.eigenvectors()
    if which == "unstable":
        idx = [i for i in range(len(w)) if w[i].real > 0]
        if len(idx) != 1:
            raise NoHyperbolicSplit(f"unstable manifold has dimension {len(idx)}, need 1")
        i = idx[0]
    elif which == "stable":
        idx = [i for i in range(len(w)) if w[i].real < 0]
        if not idx:
            raise NoHyperbolicSplit("no stable direction")
        i = idx[0]  # descending real part: first negative is the leading one
        if len(idx) > 1 and w[idx[1]].real == w[i].real:
            raise NoHyperbolicSplit("leading stable eigenvalue is not simple")
    else:
        raise ValueError("which must be 'stable' or 'unstable'")
    if abs(w[i].imag) > 0:
        raise NoHyperbolicSplit("required eigenvalue is complex")
    v = np.real(V[:, i])
    v = v / np.linalg.norm(v)
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return v, float(w[i].real)


def manifold_leg(sys: ControlAffineSystem, alpha: float, eq: EquilibriumReport, which: str,
                 eps: float = EPS_MANIFOLD, window=None, t_max: float = 50.0,
                 tol: float = LEG_TOL, sign: int | None = None,
                 stop_on_return: bool = True) -> Trajectory:
    """Integrate a branch of the stable or unstable manifold of ``eq`` (with ``u = 0``).

    Starts at ``eq.location + s * eps * v`` and runs forward (unstable) or in
    reversed time (stable) until it leaves ``window`` or ``t_max`` elapses.
    With ``stop_on_return`` the leg also ends at its closest approach once it
    comes back to within 2% of its maximal excursion from the equilibrium.
    Both signs ``s`` are tried unless ``sign`` is given; a leg that stays in
    the window is preferred, then one that returns to the equilibrium, then
    the one that travels farthest.
    """
    if not (1e-8 < eps <= 1e-3):
        raise ValueError(f"eps must lie in (1e-8, 1e-3], got {eps}")
    v, _ = manifold_direction(eq, which)
    x0 = eq.location
    reversed_ = which == "stable"
    candidates = []
    for s in ((sign,) if sign else (1, -1)):
        start = x0 + s * eps * v
        if window is not None and not _in_box(start, window):
            continue
        state = {"left": False, "returned": False, "reach": 0.0, "prev": np.inf}

        def stop(x, state=state):
            r = float(np.linalg.norm(x - x0))
            state["reach"] = max(state["reach"], r)
            if stop_on_return and state["reach"] > 100 * eps and r < 0.02 * state["reach"] \
                    and r > state["prev"]:
                state["returned"] = True
                return True
            state["prev"] = r
            if window is not None and not _in_box(x, window):
                state["left"] = True
                return True
            return False

        try:
            leg = integrate(sys, alpha, start, None, t_max, tol, reversed=reversed_, stop=stop)
        except (Divergence, StepSizeUnderflow):
            continue
        if state["left"] and len(leg) <= 2:
            continue
        reach = float(np.max(np.linalg.norm(leg.states - x0, axis=1)))
        candidates.append(((not state["left"], state["returned"], reach, leg.duration), s, leg))
    if not candidates:
        raise LeftWindowImmediately(f"{which} leg leaves the window immediately for both signs")
    candidates.sort(key=lambda c: c[0], reverse=True)
    return candidates[0][2]


@dataclass(frozen=True, eq=False)
class HomoclinicOrbit:
    """Unstable and stable legs of a (near-)homoclinic loop with a common anchor.

    ``anchor_times`` are the elapsed times on each leg at which the legs pass
    through the anchor; the homoclinic solution is parametrized so that it
    sits at the anchor at ``t = 0``.
    """

    unstable_leg: Trajectory
    stable_leg: Trajectory
    saddle: EquilibriumReport
    anchor: np.ndarray
    anchor_times: tuple
    alpha: float = 0.0
    extras: dict = field(default_factory=dict)

    def samples(self, n: int = 200) -> np.ndarray:
        """``n`` points along the loop, unstable half first, equally spaced in arc length."""
        tu, ts = self.anchor_times
        half_u = _arc_resample(self.unstable_leg, 0.0, tu, n // 2)
        half_s = _arc_resample(self.stable_leg, 0.0, ts, n - n // 2)[::-1]
        return np.vstack([half_u, half_s])


def _arc_resample(traj: Trajectory, t0: float, t1: float, n: int) -> np.ndarray:
    ts = np.linspace(t0, t1, 4000)
    pts = traj.at(ts)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, arc[-1], n)
    tt = np.interp(targets, arc, ts)
    return traj.at(tt)


def _closest_time(traj: Trajectory, target, farthest=False) -> float:
    ts = np.linspace(traj.times[0], traj.times[-1], 20 * len(traj.times) + 1)
    d = np.linalg.norm(traj.at(ts) - target, axis=1)
    k = int(np.argmax(d) if farthest else np.argmin(d))
    lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, len(ts) - 1)]
    sgn = -1.0 if farthest else 1.0
    res = minimize_scalar(lambda t: sgn * np.linalg.norm(traj.at(t) - target),
                          bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    return float(res.x)


def homoclinic_orbit(sys: ControlAffineSystem, alpha: float, saddle: EquilibriumReport,
                     window=None, eps: float = EPS_MANIFOLD, t_max: float = 50.0,
                     anchor=None, tol: float = LEG_TOL) -> HomoclinicOrbit:
    """Both manifold legs of ``saddle`` joined at an anchor point.

    The anchor defaults to the point of the unstable leg farthest from the
    saddle; a given ``anchor`` is snapped to the nearest point of the leg.
    """
    u_leg = manifold_leg(sys, alpha, saddle, "unstable", eps, window, t_max, tol)
    s_leg = manifold_leg(sys, alpha, saddle, "stable", eps, window, t_max, tol)
    if anchor is None:
        tu = _closest_time(u_leg, saddle.location, farthest=True)
    else:
        tu = _closest_time(u_leg, np.asarray(anchor, dtype=float))
    point = u_leg.at(tu)
    ts = _closest_time(s_leg, point)
    gap = float(np.linalg.norm(s_leg.at(ts) - point))
    return HomoclinicOrbit(u_leg, s_leg, saddle, point, (tu, ts), float(alpha), {"anchor_gap": gap})


def melnikov(sys: ControlAffineSystem, hom: HomoclinicOrbit, dt: float = 0.01,
             weight_floor: float = WEIGHT_FLOOR, tail_tol: float = TAIL_TOL,
             t_cap: float = 200.0, details: bool = False):
    """Trapezoidal Melnikov integral along a planar homoclinic orbit.

    Integrand: ``exp(-int_0^t div f) * (f1 df2/dalpha - f2 df1/dalpha)`` with
    ``t = 0`` at the anchor.  Beyond the start of each leg the orbit is
    continued with the linearized flow along the eigendirection, and each tail
    is cut at the first sample where the integrand magnitude drops below
    ``weight_floor``.  :class:`TailNotDecayed` is raised if the magnitude at
    the cut still exceeds ``tail_tol``.
    """
    if sys.d != 2:
        raise ValueError("Melnikov integral is defined for planar systems only")
    alpha = hom.alpha
    names = sys.variables
    div = ex.add(ex.diff(sys.drift[0], names[0]), ex.diff(sys.drift[1], names[1]))
    div_fn = ex.compile_expr(div, names)
    da = sys.dalpha_exprs
    da_fns = [ex.compile_expr(e, names) for e in da]
    x0 = hom.saddle.location
    _, lam_u = manifold_direction(hom.saddle, "unstable")
    _, lam_s = manifold_direction(hom.saddle, "stable")

    def side(leg: Trajectory, t_anchor: float, lam: float, direction: int) -> float:
        # direction -1: unstable half (physical time <= 0); +1: stable half (>= 0)
        n_leg = int(np.floor(t_anchor / dt))
        tau = direction * dt * np.arange(n_leg + 1)
        pts = leg.at(t_anchor - np.abs(tau))
        tau_start = direction * t_anchor
        start = leg.states[0]
        vals = _weights(sys, alpha, pts, tau, div_fn, da_fns)
        # continue past the leg start with the linearized flow until the weight decays
        while abs(vals[-1]) >= weight_floor and abs(tau[-1]) - t_anchor < t_cap:
            tau_e = tau[-1] + direction * dt * np.arange(1, 501)
            ext = x0 + (start - x0) * np.exp(lam * (tau_e - tau_start))[:, None]
            tau = np.concatenate([tau, tau_e])
            pts = np.vstack([pts, ext])
            vals = _weights(sys, alpha, pts, tau, div_fn, da_fns)
        mags = np.abs(vals)
        peak = int(np.argmax(mags))
        below = np.flatnonzero(mags[peak:] < weight_floor)
        cut = peak + int(below[0]) if below.size else len(tau) - 1
        if mags[cut] > tail_tol:
            raise TailNotDecayed(f"integrand weight {mags[cut]:.3g} at truncation exceeds {tail_tol}")
        return direction * float(np.trapezoid(vals[:cut + 1], tau[:cut + 1]))

    tu, ts = hom.anchor_times
    m_u = side(hom.unstable_leg, tu, lam_u, -1)
    m_s = side(hom.stable_leg, ts, lam_s, +1)
    value = m_u + m_s
    if details:
        return value, {"unstable_part": m_u, "stable_part": m_s, "dt": dt}
    return value


def _weights(sys, alpha, pts, tau, div_fn, da_fns):
    """Integrand values on samples ordered outward from the anchor (tau[0] = 0)."""
    cols = [pts[:, 0], pts[:, 1]]
    with np.errstate(all="ignore"):
        F = sys.drift_batch(alpha, pts)
        dv = np.broadcast_to(div_fn(*cols, alpha), tau.shape)
        d1 = np.broadcast_to(da_fns[0](*cols, alpha), tau.shape)
        d2 = np.broadcast_to(da_fns[1](*cols, alpha), tau.shape)
    inner = cumulative_trapezoid(dv, tau, initial=0.0)
    return np.exp(-inner) * (F[:, 0] * d2 - F[:, 1] * d1)


# ---------------------------------------------------------------------------
# cross-sections and the split function


@dataclass(frozen=True, eq=False)
class CrossSection:
    """Flat local section through ``base``.

    ``tangent`` is the oriented xi-axis.  In the plane ``normal`` is the unit
    normal; in 3D it is the normal of the section plane and the second in-plane
    coordinate runs along ``normal x tangent``.  Crossings count only within
    ``halfwidth`` of ``base`` along each in-plane coordinate.
    """

    base: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray | None = None
    halfwidth: float = 0.3

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        t = np.asarray(self.tangent, dtype=float)
        t = t / np.linalg.norm(t)
        if self.normal is None:
            if len(t) != 2:
                raise ValueError("3D sections need an explicit normal")
            n = np.array([t[1], -t[0]])
        else:
            n = np.asarray(self.normal, dtype=float)
            n = n / np.linalg.norm(n)
        if abs(np.dot(n, t)) > 1e-12:
            raise ValueError("tangent must be orthogonal to the normal")
        if not self.halfwidth > 0:
            raise ValueError("halfwidth must be positive")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "tangent", t)
        object.__setattr__(self, "normal", n)

    @property
    def d(self) -> int:
        return len(self.base)

    @property
    def axes(self) -> np.ndarray:
        """In-plane coordinate directions as rows."""
        if self.d == 2:
            return self.tangent[None, :]
        return np.vstack([self.tangent, np.cross(self.normal, self.tangent)])

    def offset(self, x) -> np.ndarray:
        return (np.asarray(x) - self.base) @ self.normal

    def coords(self, x) -> np.ndarray:
        return (np.asarray(x) - self.base) @ self.axes.T

    def point(self, q) -> np.ndarray:
        return self.base + np.atleast_1d(q) @ self.axes

    def flow_sign(self, sys, alpha) -> float:
        fn = float(sys.drift_batch(alpha, self.base[None, :])[0] @ self.normal)
        if abs(fn) <= 1e-8:
            raise NotTransverse(f"flow is tangent to the section at its base (<f,n> = {fn:.3g})")
        return float(np.sign(fn))

    def as_dict(self):
        return {"base": self.base.tolist(), "tangent": self.tangent.tolist(),
                "normal": self.normal.tolist(), "halfwidth": self.halfwidth}


def section_crossings(traj: Trajectory, section: CrossSection, direction: float, t_min: float = 0.0):
    """Yield ``(t, point, coords)`` for crossings in ``direction`` within the halfwidth.

    ``direction`` is the sign of the offset after the crossing.  Crossing
    times are refined by bisection on the dense output to ``1e-10``.
    """
    s = section.offset(traj.states)
    for k in range(len(s) - 1):
        if traj.times[k + 1] <= t_min:
            continue
        if not (direction * s[k] < 0 and direction * s[k + 1] >= 0):
            continue
        a, b = traj.times[k], traj.times[k + 1]
        fa = s[k]
        for _ in range(200):
            if b - a <= 1e-10:
                break
            mid = 0.5 * (a + b)
            fm = section.offset(traj.at(mid))
            if np.sign(fm) == np.sign(fa) and fm != 0:
                a, fa = mid, fm
            else:
                b = mid
        t = 0.5 * (a + b)
        if t <= t_min:
            continue
        p = traj.at(t)
        q = section.coords(p)
        if np.all(np.abs(q) <= section.halfwidth):
            yield t, p, q


def first_crossing(traj, section, direction, t_min=0.0):
    for hit in section_crossings(traj, section, direction, t_min):
        return hit
    raise NoCrossing("trajectory does not cross the section within its halfwidth")


def split_function(sys: ControlAffineSystem, alpha: float, section: CrossSection, saddle_seed=None,
                   window=None, eps: float = EPS_MANIFOLD, t_max: float = 40.0,
                   tol: float = LEG_TOL, reference: str = "stable", details: bool = False):
    """Signed xi-distance between the unstable and the stable manifold on ``section``.

    The unstable leg's first crossing in the flow direction gives ``xi_u``.
    With ``reference="stable"`` the first crossing of the stable leg gives
    ``xi_s`` and the result is ``xi_u - xi_s``; with ``reference="base"`` the
    result is ``xi_u`` measured from the section base.
    """
    seed = section.base if saddle_seed is None else saddle_seed
    eq = find_equilibrium(sys, alpha, seed)
    direction = section.flow_sign(sys, alpha)
    u_leg = manifold_leg(sys, alpha, eq, "unstable", eps, window, t_max, tol, stop_on_return=False)
    t_u, p_u, q_u = first_crossing(u_leg, section, direction)
    xi_u = float(q_u[0])
    xi_s = 0.0
    p_s = None
    if reference == "stable":
        s_leg = manifold_leg(sys, alpha, eq, "stable", eps, window, t_max, tol, stop_on_return=False)
        _, p_s, q_s = first_crossing(s_leg, section, -direction)
        xi_s = float(q_s[0])
    elif reference != "base":
        raise ValueError("reference must be 'stable' or 'base'")
    beta = xi_u - xi_s
    if details:
        return beta, {"xi_u": xi_u, "xi_s": xi_s, "crossing_u": p_u, "crossing_s": p_s,
                      "saddle": eq, "unstable_leg": u_leg}
    return beta
