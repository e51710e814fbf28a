"""Solver and verification harness for the parabolic p-Laplacian system with convection."""
from .fields import (
    Grid,
    ParameterError,
    SimParams,
    Trajectory,
    VectorField,
    inner,
    lp_norm,
    make_initial,
    weighted_sup_monitor,
)
from .stepper import SchemeConfig, StepError, run

__all__ = [
    "Grid",
    "ParameterError",
    "SchemeConfig",
    "SimParams",
    "StepError",
    "Trajectory",
    "VectorField",
    "inner",
    "lp_norm",
    "make_initial",
    "run",
    "weighted_sup_monitor",
]

__version__ = "0.1.0"
