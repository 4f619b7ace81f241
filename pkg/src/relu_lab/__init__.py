"""Single-ReLU-neuron regression with GLM-tron and SGD.

Exact and Monte-Carlo risk evaluation, effective-dimension bound
quantities, and a seeded experiment harness.
"""

from relu_lab.model import (
    NoiseKind,
    NoiseModel,
    ProblemInstance,
    Spectrum,
    StepsizeSchedule,
    ValidationError,
    build_spectrum,
    h_quadratic_form,
    stepsize_at,
)

__all__ = [
    "NoiseKind",
    "NoiseModel",
    "ProblemInstance",
    "Spectrum",
    "StepsizeSchedule",
    "ValidationError",
    "build_spectrum",
    "h_quadratic_form",
    "stepsize_at",
]

__version__ = "0.1.0"
