"""Nonparametric empirical Bayes confidence intervals for heteroskedastic normal means."""

from npebci.core import (
    Dataset,
    Discrete,
    Gaussian,
    GaussianMixture,
    Interval,
    Laplace,
    Level,
    Observation,
    ScaledStudentT,
    check_function,
    knight_decomposition,
    validate_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Discrete",
    "Gaussian",
    "GaussianMixture",
    "Interval",
    "Laplace",
    "Level",
    "Observation",
    "ScaledStudentT",
    "check_function",
    "knight_decomposition",
    "validate_dataset",
    "__version__",
]
