"""Control sets of control-affine systems near homoclinic bifurcations.

Subpackages: :mod:`.expr` (expressions), :mod:`.dynamics` (systems and
integration), :mod:`.analysis` (equilibria, manifolds, cycles, brackets),
:mod:`.reachset` (grid algorithms), :mod:`.scenarios` (presets and sweeps)
and :mod:`.cli` (command line).
"""

from . import analysis, dynamics, errors, expr, reachset
from .dynamics import ControlAffineSystem, ControlFunction, Trajectory, integrate, rhs
from .reachset import CellSet, ControlSetResult, Grid

__version__ = "0.1.0"

__all__ = [
    "CellSet", "ControlAffineSystem", "ControlFunction", "ControlSetResult", "Grid", "Trajectory",
    "analysis", "dynamics", "errors", "expr", "integrate", "reachset", "rhs",
]
