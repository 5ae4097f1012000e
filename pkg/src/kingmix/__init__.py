"""Fluctuations of the block-counting process of Lambda-coalescents with a Kingman part."""

from .errors import *  # noqa: F401,F403
from .measure import DrivingMeasure, kingman, load_measure, mixed, validate
from .rates import RateFunctional
from .speed import SpeedFunction, Variant, drift_constant

__all__ = [
    "DrivingMeasure", "kingman", "load_measure", "mixed", "validate",
    "RateFunctional", "SpeedFunction", "Variant", "drift_constant",
]
