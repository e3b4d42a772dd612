"""Equilibria, their spectra and the saddle quantity."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..dynamics import ControlAffineSystem
from ..errors import ContinuationBreak, EvalDomainError, JacobianSingular, NoConvergence
from .. import expr as ex

NEWTON_TOL = 1e-12
HYPERBOLICITY_TOL = 1e-8


class Kind(str, enum.Enum):
    SADDLE2D = "saddle2d"
    SADDLE3D = "saddle3d"
    SADDLE_FOCUS = "saddle_focus"
    STABLE = "stable_node_or_focus"
    UNSTABLE = "unstable_node_or_focus"
    NONHYPERBOLIC = "nonhyperbolic"


SADDLE_KINDS = (Kind.SADDLE2D, Kind.SADDLE3D, Kind.SADDLE_FOCUS)


@dataclass(frozen=True, eq=False)
class EquilibriumReport:
    location: np.ndarray
    jacobian: np.ndarray
    eigenvalues: np.ndarray  # complex, descending real part
    kind: Kind
    saddle_quantity: float | None
    alpha: float = 0.0
    residual: float = 0.0

    @property
    def d(self) -> int:
        return len(self.location)

    @property
    def is_hyperbolic(self) -> bool:
        return self.kind != Kind.NONHYPERBOLIC

    def eigenvectors(self):
        """Eigenpairs of the Jacobian in the same (descending real part) order."""
        w, v = np.linalg.eig(self.jacobian)
        order = _spectral_order(w)
        return w[order], v[:, order]

    def as_dict(self) -> dict:
        return {
            "location": [float(v) for v in self.location],
            "eigenvalues": [complex(v) for v in self.eigenvalues],
            "kind": self.kind.value,
            "saddle_quantity": self.saddle_quantity,
        }


def _spectral_order(w):
    return np.lexsort((-w.imag, -w.real))


def sorted_spectrum(w) -> np.ndarray:
    w = np.asarray(w, dtype=complex)
    return w[_spectral_order(w)]


def eigenvalues(J) -> np.ndarray:
    """Eigenvalues of ``J``; planar matrices use the trace/determinant formula.

    The closed form keeps integer spectra exact, which a QR sweep does not.
    """
    J = np.asarray(J, dtype=float)
    if J.shape != (2, 2):
        return np.linalg.eigvals(J).astype(complex)
    tr = J[0, 0] + J[1, 1]
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    r = np.sqrt(complex(tr * tr / 4.0 - det))
    return np.array([tr / 2.0 + r, tr / 2.0 - r], dtype=complex)


def saddle_quantity(eigenvalues) -> float | None:
    """Leading unstable plus leading stable real part, or ``None`` if not a saddle.

    In the plane this is ``lambda1 + lambda2``; for a 3D saddle with
    ``l1 > 0 > l2 > l3`` it is ``l1 + l2``; for a saddle-focus ``l1 + Re l2,3``.
    """
    re = np.real(np.asarray(eigenvalues, dtype=complex))
    pos = re[re > 0]
    negs = re[re < 0]
    if pos.size == 0 or negs.size == 0:
        return None
    return float(pos.min() + negs.max())


def classify_spectrum(eigenvalues, hyperbolicity_tol: float = HYPERBOLICITY_TOL) -> Kind:
    w = np.asarray(eigenvalues, dtype=complex)
    re = w.real
    if np.any(np.abs(re) < hyperbolicity_tol):
        return Kind.NONHYPERBOLIC
    n_pos = int(np.sum(re > 0))
    d = len(w)
    if n_pos == 0:
        return Kind.STABLE
    if n_pos == d:
        return Kind.UNSTABLE
    if d == 2:
        return Kind.SADDLE2D
    # d == 3: the one-dimensional manifold is real; the other pair decides saddle vs saddle-focus
    pair = w[re < 0] if n_pos == 1 else w[re > 0]
    if np.any(np.abs(pair.imag) > 0):
        return Kind.SADDLE_FOCUS
    return Kind.SADDLE3D


def report_at(sys: ControlAffineSystem, alpha: float, x,
              hyperbolicity_tol: float = HYPERBOLICITY_TOL) -> EquilibriumReport:
    """Spectral report at ``x`` (assumed to be an equilibrium)."""
    x = np.asarray(x, dtype=float)
    J = sys.jacobian(alpha, x)
    w = sorted_spectrum(eigenvalues(J))
    kind = classify_spectrum(w, hyperbolicity_tol)
    sq = saddle_quantity(w) if kind in SADDLE_KINDS else None
    res = float(np.linalg.norm(_drift(sys, alpha, x)))
    return EquilibriumReport(x, J, w, kind, sq, float(alpha), res)


def _drift(sys, alpha, x):
    env = sys.env(alpha, x)
    return np.array([ex.evaluate(e, env) for e in sys.drift])


def find_equilibrium(sys: ControlAffineSystem, alpha: float, seed, newton_tol: float = NEWTON_TOL,
                     max_iter: int = 100, hyperbolicity_tol: float = HYPERBOLICITY_TOL) -> EquilibriumReport:
    """Damped Newton on ``f0(alpha, .)`` starting at ``seed``."""
    x = np.asarray(seed, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        raise ValueError("seed must be finite")
    try:
        F = _drift(sys, alpha, x)
    except EvalDomainError as exc:
        raise NoConvergence(f"drift undefined at seed: {exc}") from None
    for _ in range(max_iter):
        fn = np.linalg.norm(F)
        if fn < newton_tol:
            return report_at(sys, alpha, x, hyperbolicity_tol)
        J = sys.jacobian(alpha, x)
        try:
            if np.linalg.cond(J) > 1e14:
                raise np.linalg.LinAlgError
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            raise JacobianSingular(f"singular Jacobian at {x.tolist()}") from None
        lam = 1.0
        while True:
            xt = x + lam * dx
            try:
                Ft = _drift(sys, alpha, xt)
                ok = np.all(np.isfinite(Ft)) and np.linalg.norm(Ft) < (1 - 1e-4 * lam) * fn
            except EvalDomainError:
                ok = False
            if ok or lam < 1e-6:
                break
            lam *= 0.5
        if not ok:
            # accept a full step once more if damping stalls; Newton may still recover
            xt = x + dx
            try:
                Ft = _drift(sys, alpha, xt)
            except EvalDomainError:
                raise NoConvergence("Newton step left the domain of the vector field") from None
        x, F = xt, Ft
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e12:
            raise NoConvergence("Newton iterates diverged")
    if np.linalg.norm(F) < newton_tol:
        return report_at(sys, alpha, x, hyperbolicity_tol)
    raise NoConvergence(f"no convergence after {max_iter} iterations (|f|={np.linalg.norm(F):.3g})")


def continue_equilibrium(sys: ControlAffineSystem, alpha_values: Sequence[float], seed,
                         max_gap: float = 0.1, **kw) -> list[EquilibriumReport]:
    """Chain Newton along sorted ``alpha_values`` seeding each solve with the previous solution."""
    alphas = list(alpha_values)
    if any(b < a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alpha_values must be sorted")
    out = []
    x = np.asarray(seed, dtype=float)
    for a in alphas:
        rep = find_equilibrium(sys, a, x, **kw)
        if out and np.linalg.norm(rep.location - out[-1].location) > max_gap:
            raise ContinuationBreak(
                f"equilibrium jumped by {np.linalg.norm(rep.location - out[-1].location):.3g} at alpha={a}")
        out.append(rep)
        x = rep.location
    return out


class HomoclinicCase(str, enum.Enum):
    SADDLE_SIGMA_NEG = "saddle_sigma_neg"
    SADDLE_SIGMA_POS = "saddle_sigma_pos_orientation_undetermined"
    SADDLE_FOCUS_SIGMA_NEG = "saddle_focus_sigma_neg"
    SADDLE_FOCUS_SIGMA_POS = "saddle_focus_sigma_pos_out_of_scope"
    NOT_APPLICABLE = "not_applicable"


def classify_homoclinic_case(eq) -> HomoclinicCase:
    """Dispatch a 3D equilibrium onto the homoclinic bifurcation cases.

    Accepts an :class:`EquilibriumReport` or a bare list of three eigenvalues.
    The simple/twisted alternative for a saddle with positive saddle quantity
    is not decided; the label says so.
    """
    w = eq.eigenvalues if isinstance(eq, EquilibriumReport) else sorted_spectrum(eq)
    w = sorted_spectrum(w)
    if len(w) != 3:
        return HomoclinicCase.NOT_APPLICABLE
    re = w.real
    if np.any(np.abs(re) < HYPERBOLICITY_TOL) or int(np.sum(re > 0)) != 1 or abs(w[0].imag) > 0:
        return HomoclinicCase.NOT_APPLICABLE
    sigma = saddle_quantity(w)
    if sigma == 0:
        return HomoclinicCase.NOT_APPLICABLE
    stable = w[1:]
    if np.all(stable.imag == 0):
        if not stable[0].real > stable[1].real:
            return HomoclinicCase.NOT_APPLICABLE
        return HomoclinicCase.SADDLE_SIGMA_NEG if sigma < 0 else HomoclinicCase.SADDLE_SIGMA_POS
    return HomoclinicCase.SADDLE_FOCUS_SIGMA_NEG if sigma < 0 else HomoclinicCase.SADDLE_FOCUS_SIGMA_POS
