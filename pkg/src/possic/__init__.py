"""Inference with possibility functions and supremum-based credibility."""

from .core import (
    Beta,
    ChiSquared,
    ExtendedVariance,
    Gamma,
    Indicator,
    InverseGamma,
    LossBased,
    ModeSet,
    Normal,
    PossibilityFn,
    StudentT,
    Tabulated,
    construct_family,
    credibility,
    evaluate,
    expected_value,
    from_json,
    make_from_loss,
    numeric_moments,
    temper,
    to_json,
    variance,
)
from .numerics import OptimizerConfig, global_sup

__version__ = "0.1.0"
