"""Mean field game solvers: finite-difference and deep policy iteration."""

__version__ = "0.1.0"

from .core import (
    Boundary,
    GridField,
    HamiltonianKind,
    MFGProblem,
    Solution,
    SpaceTimeGrid,
    eval_field,
    uniform_grid,
)
from .problems import make_problem

__all__ = [
    "Boundary",
    "GridField",
    "HamiltonianKind",
    "MFGProblem",
    "Solution",
    "SpaceTimeGrid",
    "eval_field",
    "make_problem",
    "uniform_grid",
]
