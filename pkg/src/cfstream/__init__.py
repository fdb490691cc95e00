"""Streaming selection of real counterfactual example sets under diversity bounds."""

from .domain import (
    ConstraintSpec,
    Explanation,
    ExplanationMember,
    Item,
    Schema,
    UtilityConfig,
    validate_constraints,
)
from .engine import QuerySession, RunStats, run_stream
from .similarity import SimilarityMeasure

__version__ = "0.1.0"

__all__ = [
    "ConstraintSpec",
    "Explanation",
    "ExplanationMember",
    "Item",
    "Schema",
    "SimilarityMeasure",
    "UtilityConfig",
    "QuerySession",
    "RunStats",
    "run_stream",
    "validate_constraints",
    "__version__",
]
