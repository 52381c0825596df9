"""treedrop: height-bounded restructuring of static multiway search trees.

Core objects and the full pipeline are importable from the package root; the
HTTP service lives in ``treedrop.service`` and the CLI in ``treedrop.cli``.
"""

from .builder import (
    AuditReport,
    BuildResult,
    PathLengthBound,
    audit_lemma_bounds,
    build_near_optimal,
    monotone_runs,
    path_length_upper_bound,
)
from .codec import dist_to_text, parse_dist, parse_tree, tree_to_text
from .errors import ParseError, PreconditionError, TreedropError
from .tree import (
    AccessDistribution,
    DepthProfile,
    DropReport,
    MultiwayTree,
    ValidationResult,
    depth_profile,
    drop_report,
    entropy,
    floor_log,
    path_length,
    validate,
)
from .weights import (
    Scheme,
    SchemeParams,
    WeightingOutput,
    alphabetic_weights,
    hybrid_weights,
    relative_drop_cap,
    relative_weights,
    scheme_weights,
    solve_depth_cutoff,
    worstcase_weights,
)

__version__ = "0.1.0"

__all__ = [
    "AccessDistribution",
    "AuditReport",
    "BuildResult",
    "DepthProfile",
    "DropReport",
    "MultiwayTree",
    "ParseError",
    "PathLengthBound",
    "PreconditionError",
    "Scheme",
    "SchemeParams",
    "TreedropError",
    "ValidationResult",
    "WeightingOutput",
    "__version__",
    "alphabetic_weights",
    "audit_lemma_bounds",
    "build_near_optimal",
    "depth_profile",
    "dist_to_text",
    "drop_report",
    "entropy",
    "floor_log",
    "hybrid_weights",
    "monotone_runs",
    "parse_dist",
    "parse_tree",
    "path_length",
    "path_length_upper_bound",
    "relative_drop_cap",
    "relative_weights",
    "scheme_weights",
    "solve_depth_cutoff",
    "tree_to_text",
    "validate",
    "worstcase_weights",
]
