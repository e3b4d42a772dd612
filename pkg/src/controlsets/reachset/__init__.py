"""Grid approximation of reachable sets, control sets and chain transitive sets."""

from .certificate import OrbitCertificate, periodic_orbit_certificate
from .expand import LAUNCH_MODES, STEP_T, ReachInfo, expand, reach_fixpoint, sample_controls, seed_cells
from .grid import CellSet, Grid
from .sets import (ControlSetResult, chain_transitive_cells, classify_invariance, control_set,
                   transition_graph)

__all__ = [
    "CellSet", "ControlSetResult", "Grid", "LAUNCH_MODES", "OrbitCertificate", "ReachInfo",
    "STEP_T", "chain_transitive_cells", "classify_invariance", "control_set", "expand",
    "periodic_orbit_certificate", "reach_fixpoint", "sample_controls", "seed_cells",
    "transition_graph",
]
