"""Lie brackets and rank conditions (accessibility, ad-span, Kalman)."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import expr as ex
from ..dynamics import ControlAffineSystem
from .equilibria import EquilibriumReport

RANK_RTOL = 1e-10


def lie_bracket(f: Sequence[ex.Expression], g: Sequence[ex.Expression],
                names: Sequence[str]) -> tuple:
    """Symbolic ``[f, g] = Dg f - Df g`` with respect to the state ``names``."""
    if len(f) != len(g) or len(f) != len(names):
        raise ValueError("fields must have the same dimension as the state")
    out = []
    for i in range(len(names)):
        acc = ex.ZERO
        for j, v in enumerate(names):
            acc = ex.add(acc, ex.mul(ex.diff(g[i], v), f[j]))
            acc = ex.sub(acc, ex.mul(ex.diff(f[i], v), g[j]))
        out.append(acc)
    return tuple(out)


def ad_powers(f0, g, names, k_max: int) -> list[tuple]:
    """``[ad^0 g, ad^1 g, ..., ad^k_max g]`` with ``ad h = [f0, h]``."""
    out = [tuple(g)]
    for _ in range(k_max):
        out.append(lie_bracket(f0, out[-1], names))
    return out


def evaluate_field(field, env) -> np.ndarray:
    return np.array([ex.evaluate(e, env) for e in field])


def numerical_rank(vectors, rtol: float = RANK_RTOL) -> int:
    """Rank of the column span with tolerance ``rtol * (largest column norm)``."""
    M = np.atleast_2d(np.asarray(vectors, dtype=float))
    if M.size == 0:
        return 0
    scale = np.max(np.linalg.norm(M, axis=0))
    if scale == 0.0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > rtol * scale))


def _base_fields(sys):
    return [tuple(sys.drift)] + [tuple(g) for g in sys.control_fields]


def accessibility_rank(sys: ControlAffineSystem, alpha: float, x, depth_cap: int = 4) -> int:
    """Rank at ``x`` of the Lie algebra generated by ``f0, ..., fm`` (brackets up to ``depth_cap``)."""
    if depth_cap < 1:
        raise ValueError("depth_cap must be at least 1")
    names = sys.state_names
    env = sys.env(alpha, x)
    base = _base_fields(sys)
    columns = [evaluate_field(f, env) for f in base]
    rank = numerical_rank(np.array(columns).T)
    level = base
    for _ in range(depth_cap):
        if rank == sys.d:
            break
        nxt = []
        for a in base:
            for b in level:
                if a is b:
                    continue
                br = lie_bracket(a, b, names)
                if all(ex.is_zero(e) for e in br):
                    continue
                nxt.append(br)
                columns.append(evaluate_field(br, env))
        if not nxt:
            break
        level = nxt
        rank = numerical_rank(np.array(columns).T)
    return rank


def ad_span_vectors(sys: ControlAffineSystem, alpha: float, y, k_max: int) -> np.ndarray:
    """Columns ``f0(y), ad^k_{f0} f_i(y)`` for ``i = 1..m``, ``k = 0..k_max``."""
    if k_max < 0:
        raise ValueError("k_max must be non-negative")
    env = sys.env(alpha, y)
    cols = [evaluate_field(sys.drift, env)]
    for g in sys.control_fields:
        for field in ad_powers(sys.drift, g, sys.state_names, k_max):
            cols.append(evaluate_field(field, env))
    return np.array(cols).T


def ad_span_check(sys: ControlAffineSystem, alpha: float, y, k_max: int = 1) -> bool:
    """Sufficient test for the inner pair condition at ``y``."""
    return numerical_rank(ad_span_vectors(sys, alpha, y, k_max)) == sys.d


def controllability_matrix(sys: ControlAffineSystem, alpha: float, eq: EquilibriumReport) -> np.ndarray:
    """``[B, AB, ..., A^{d-1} B]`` of the linearization at ``eq``."""
    x = eq.location
    A = sys.jacobian(alpha, x)
    env = sys.env(alpha, x)
    B = np.array([evaluate_field(g, env) for g in sys.control_fields]).T
    blocks = [B]
    for _ in range(sys.d - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def kalman_rank(sys: ControlAffineSystem, alpha: float, eq: EquilibriumReport) -> int:
    return numerical_rank(controllability_matrix(sys, alpha, eq))
