"""Numerical toolkit for massless two-dimensional QED on conformally flat backgrounds."""

from .errors import CurvedQEDError
from .geometry import ConformalGeometry
from .parametrix import ModelParameters

__all__ = ["ConformalGeometry", "CurvedQEDError", "ModelParameters"]
__version__ = "0.1.0"
