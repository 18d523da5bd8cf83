"""Curve fitting and scaling analysis."""

from ._base import FitResult
from .decay import (
    ExponentialDecay,
    PowerLawDecay,
    fit_exponential,
    fit_exponential_trajectories,
    fit_power_law,
    select_window,
)
from .fss import Collapse, FiniteSizeScaling, FssModel, collapse_score, collapse_transform, fss_fit
from .lcor_law import CorrelationLengthLaw, fit_lcor_law, law_value

__all__ = [
    "Collapse",
    "CorrelationLengthLaw",
    "ExponentialDecay",
    "FiniteSizeScaling",
    "FitResult",
    "FssModel",
    "PowerLawDecay",
    "collapse_score",
    "collapse_transform",
    "fit_exponential",
    "fit_exponential_trajectories",
    "fit_lcor_law",
    "fit_power_law",
    "fss_fit",
    "law_value",
    "select_window",
]
