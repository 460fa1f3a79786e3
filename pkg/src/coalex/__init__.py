"""Coalition explanations for discrete structural causal models."""

from .errors import CoalexError, RefusalError
from .inference import CategoricalDistribution, EstimatorConfig
from .model import (
    Coalition,
    Domain,
    Observation,
    Scm,
    apply_intervention,
    build_scm,
    evaluate,
    load_scm,
)
from .score import ExplanationScore, expected_explanation_score, explanation_score_kl
from .search import (
    SearchConfig,
    expected_minimal_coalitions,
    minimal_coalitions,
    optimal_intervention,
)

__version__ = "0.1.0"

__all__ = [
    "CategoricalDistribution",
    "Coalition",
    "CoalexError",
    "Domain",
    "EstimatorConfig",
    "ExplanationScore",
    "Observation",
    "RefusalError",
    "Scm",
    "SearchConfig",
    "apply_intervention",
    "build_scm",
    "evaluate",
    "expected_explanation_score",
    "expected_minimal_coalitions",
    "explanation_score_kl",
    "load_scm",
    "minimal_coalitions",
    "optimal_intervention",
]
