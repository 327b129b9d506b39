"""Fairness-regularized matrix completion.

Rating predictors (matrix factorization and a user-based autoencoder) trained
under differentiable fairness penalties built on kernel density estimates,
plus the measures, data loaders and multi-seed harness around them.
"""

from .core import (
    UNGROUPED,
    GroupAssignment,
    ObservationMask,
    RatingDataset,
    RatingMatrix,
    SplitSpec,
    ValueDomain,
    split_observations,
    threshold_preferences,
)
from .errors import (
    ConsistencyError,
    DivergenceError,
    FairMCError,
    FormatError,
    InvalidInputError,
    ParseError,
    UnsupportedError,
)
from .kde import PenaltyConfig, PenaltyKind
from .metrics import MetricsReport, evaluate
from .mf import FactorModel, TrainConfig
from .synthgen import SyntheticConfig

__version__ = "0.1.0"

__all__ = [
    "UNGROUPED", "GroupAssignment", "ObservationMask", "RatingDataset", "RatingMatrix", "SplitSpec",
    "ValueDomain", "split_observations", "threshold_preferences",
    "ConsistencyError", "DivergenceError", "FairMCError", "FormatError", "InvalidInputError", "ParseError",
    "UnsupportedError", "PenaltyConfig", "PenaltyKind", "MetricsReport", "evaluate", "FactorModel",
    "TrainConfig", "SyntheticConfig",
]
