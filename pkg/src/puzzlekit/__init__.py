"""
puzzlekit - Puzzle partitions, nests, cascades and conjugacy measurement for
real one-dimensional maps.
"""

from .complex_trace import chain_disk_pullback, disk, power_pullback
from .conjugacy import (
    basin_conjugacy,
    build_conjugacy,
    check_combinatorial_equivalence,
    order_mismatch_experiment,
    qs_constant,
)
from .decorators import track_analysis
from .errors import ConfigurationError, MapDefinitionError, PuzzlekitError
from .families import (
    create_affine_map,
    create_chebyshev_map,
    create_circle_map,
    create_cubic_map,
    create_logistic_map,
    create_parabolic_germ,
    create_power_map,
    create_quadratic_map,
    create_quartic_unimodal_map,
    create_sine_map,
    create_tent_map,
)
from .geometry import (
    admissible_metrics,
    cross_ratio,
    cross_ratio_distortion,
    length_sum,
    nice_length_sum,
    niceness_modulus,
    yoccoz_profile,
    yoccoz_profile_explicit,
)
from .maps import MapSpec, load_map, load_map_definition
from .nests import (
    classify_recurrence,
    detect_cascades,
    enhanced_cascade_nest,
    good_nest,
    principal_nest,
    walk_enhanced_nest,
)
from .orbits import find_periodic_orbits, parabolic_escape_rate, partial_order
from .precision import Precision, default_precision
from .puzzle import (
    build_starting_partition,
    chain_of,
    fibonacci_parameter_search,
    first_entry,
    partition_tree,
    puzzle_piece,
)
from .runner import AnalysisRunner
from .schemas import generate_report_schemas

__version__ = "0.1.0"
__all__ = [
    # Maps and precision
    "MapSpec",
    "load_map",
    "load_map_definition",
    "Precision",
    "default_precision",
    # Families
    "create_affine_map",
    "create_chebyshev_map",
    "create_circle_map",
    "create_cubic_map",
    "create_logistic_map",
    "create_parabolic_germ",
    "create_power_map",
    "create_quadratic_map",
    "create_quartic_unimodal_map",
    "create_sine_map",
    "create_tent_map",
    # Orbits
    "find_periodic_orbits",
    "parabolic_escape_rate",
    "partial_order",
    # Puzzles
    "build_starting_partition",
    "chain_of",
    "fibonacci_parameter_search",
    "first_entry",
    "partition_tree",
    "puzzle_piece",
    # Nests
    "classify_recurrence",
    "detect_cascades",
    "enhanced_cascade_nest",
    "good_nest",
    "principal_nest",
    "walk_enhanced_nest",
    # Geometry
    "admissible_metrics",
    "cross_ratio",
    "cross_ratio_distortion",
    "length_sum",
    "nice_length_sum",
    "niceness_modulus",
    "yoccoz_profile",
    "yoccoz_profile_explicit",
    # Complex traces
    "chain_disk_pullback",
    "disk",
    "power_pullback",
    # Conjugacy
    "basin_conjugacy",
    "build_conjugacy",
    "check_combinatorial_equivalence",
    "order_mismatch_experiment",
    "qs_constant",
    # Running and reporting
    "AnalysisRunner",
    "track_analysis",
    "generate_report_schemas",
    # Errors
    "PuzzlekitError",
    "ConfigurationError",
    "MapDefinitionError",
]
