"""Advection-informed state-space wind forecasting.

The compiled core lives in ``deepmide._deepmide``; everything public is
re-exported here.
"""

from ._deepmide import (
    ConfigError,
    DomainError,
    IoError,
    Model,
    NumericalError,
    PreconditionError,
    __version__,
    box_cox,
    fit,
    fit_box_cox,
    gradcheck,
    improvement,
    instance_count,
    inverse_box_cox,
    noise_covariance,
    propagator,
    roll_count,
    simulate,
    spectral_radius,
    wind_shear,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "IoError",
    "Model",
    "NumericalError",
    "PreconditionError",
    "box_cox",
    "fit",
    "fit_box_cox",
    "gradcheck",
    "improvement",
    "instance_count",
    "inverse_box_cox",
    "noise_covariance",
    "propagator",
    "roll_count",
    "simulate",
    "spectral_radius",
    "wind_shear",
]
