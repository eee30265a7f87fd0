"""Position-bias feedback-loop simulator and popularity-skew analysis."""

__version__ = "0.1.0"

from .domain import (
    Catalog,
    ImpressionRecord,
    InteractionLog,
    PositionBiasCurve,
    RankedSlate,
    RelevanceModel,
    bias_at,
    generate_world,
)
from .errors import (
    ConfigError,
    DomainError,
    EmptyHistogramError,
    EstimationError,
    NoInteractionError,
    RequestError,
    TrainingError,
)

__all__ = [
    "Catalog",
    "ConfigError",
    "DomainError",
    "EmptyHistogramError",
    "EstimationError",
    "ImpressionRecord",
    "InteractionLog",
    "NoInteractionError",
    "PositionBiasCurve",
    "RankedSlate",
    "RelevanceModel",
    "RequestError",
    "TrainingError",
    "bias_at",
    "generate_world",
]
