"""Distances between finite point sets."""

import numpy as np
from scipy.spatial import cKDTree

from ..errors import EmptyInput


def directed_hausdorff(a, b) -> float:
    """``max_{p in a} min_{q in b} |p - q|`` (Euclidean)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise EmptyInput("Hausdorff distance needs two nonempty point sets")
    dist, _ = cKDTree(b).query(a)
    return float(np.max(dist))


def hausdorff(a, b) -> float:
    """Exact discrete Hausdorff distance of two point lists."""
    return max(directed_hausdorff(a, b), directed_hausdorff(b, a))
