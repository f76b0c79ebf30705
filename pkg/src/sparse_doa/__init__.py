"""Sparse subarray selection for direction finding.

Geometry and snapshot simulation, Cramer-Rao bounds per subarray, exhaustive /
greedy / annealed subarray search, a small from-scratch CNN that maps sample
covariances to the CRB-optimal subarray, MUSIC-based evaluation, and the
``sparse-doa`` experiment CLI.
"""

__version__ = "0.1.0"

from .geometry import ArrayGeometry, Direction, make_geometry, steering_vector  # noqa: E402
from .bounds import CrbResult, absolute_crb, crb_pair  # noqa: E402
from .selection import best_subarray, greedy_select, random_select, reduce_classes  # noqa: E402

__all__ = [
    "ArrayGeometry",
    "CrbResult",
    "Direction",
    "absolute_crb",
    "best_subarray",
    "crb_pair",
    "greedy_select",
    "make_geometry",
    "random_select",
    "reduce_classes",
    "steering_vector",
]
