"""Local and global analysis of the uncontrolled dynamics."""

from .brackets import (accessibility_rank, ad_powers, ad_span_check, ad_span_vectors,
                       controllability_matrix, kalman_rank, lie_bracket, numerical_rank)
from .cycles import LimitCycleResult, find_limit_cycle, return_map
from .equilibria import (EquilibriumReport, HomoclinicCase, Kind, classify_homoclinic_case,
                         classify_spectrum, continue_equilibrium, find_equilibrium, report_at,
                         saddle_quantity)
from .geometry import directed_hausdorff, hausdorff
from .manifolds import (CrossSection, HomoclinicOrbit, first_crossing, homoclinic_orbit,
                        manifold_direction, manifold_leg, melnikov, section_crossings,
                        split_function)

__all__ = [
    "CrossSection", "EquilibriumReport", "HomoclinicCase", "HomoclinicOrbit", "Kind",
    "LimitCycleResult", "accessibility_rank", "ad_powers", "ad_span_check", "ad_span_vectors",
    "classify_homoclinic_case", "classify_spectrum", "continue_equilibrium",
    "controllability_matrix", "directed_hausdorff", "find_equilibrium", "find_limit_cycle",
    "first_crossing", "hausdorff", "homoclinic_orbit", "kalman_rank", "lie_bracket",
    "manifold_direction", "manifold_leg", "melnikov", "numerical_rank", "report_at",
    "return_map", "saddle_quantity", "section_crossings", "split_function",
]
