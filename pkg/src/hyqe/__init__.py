"""Context re-ranking with LLM-generated hypothetical queries."""

from .core import ContextDoc, Embedding, Query, ScoredContext, SimilarityMode, inner_product, similarity
from .errors import (
    CorruptRecordError,
    DimensionError,
    DuplicateIdError,
    EmptyEvaluationError,
    HyQEError,
    InvalidInputError,
    ParseError,
    ProviderError,
    WindowExceededError,
    ZeroNormError,
)
from .scoring import Aggregation, ScoreBreakdown, ScoreConfig, downsample, score

__version__ = "0.1.0"

__all__ = [
    "Aggregation",
    "ContextDoc",
    "CorruptRecordError",
    "DimensionError",
    "DuplicateIdError",
    "Embedding",
    "EmptyEvaluationError",
    "HyQEError",
    "InvalidInputError",
    "ParseError",
    "ProviderError",
    "Query",
    "ScoreBreakdown",
    "ScoreConfig",
    "ScoredContext",
    "SimilarityMode",
    "WindowExceededError",
    "ZeroNormError",
    "downsample",
    "inner_product",
    "score",
    "similarity",
]
