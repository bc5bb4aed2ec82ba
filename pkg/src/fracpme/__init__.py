"""Nonlinear fractional porous-medium flows on an interval: operators, solver and bound audits."""

from .estimates import BoundReport, ExponentSet, exponents, weighted_l1
from .harness import ExperimentConfig, run_experiment
from .nonlinearity import NonlinearitySpec
from .operator import DiscreteOperator, Grid, OperatorSpec, assemble
from .solver import TimeGrid, Trajectory, run_mild

__version__ = "0.1.0"

__all__ = [
    "BoundReport", "DiscreteOperator", "ExperimentConfig", "ExponentSet", "Grid", "NonlinearitySpec",
    "OperatorSpec", "TimeGrid", "Trajectory", "assemble", "exponents", "run_experiment", "run_mild",
    "weighted_l1",
]
