"""Preferential attachment with affine weights: simulation, exact moments and
the Gaussian limit of degree-count fluctuations."""

from .errors import (
    DegenerateParameterError,
    InsufficientDataError,
    InvariantError,
    PAError,
    ParameterError,
    SelfLoopError,
    ShapeError,
    TargetRangeError,
)
from .model import GraphState, ModelParams, init_pa1, simulate

__version__ = "0.1.0"
