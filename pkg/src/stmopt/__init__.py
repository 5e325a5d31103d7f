"""Stochastic third-order tensor method for finite-sum non-convex minimization."""

__version__ = "0.1.0"

from .driver import RunReport, StmConfig, run
from .model import QuarticModel
from .problems import make_problem
from .sampling import plan_with_replacement, plan_without_replacement
from .subsolver import solve
from .tensor import SymTensor3

__all__ = [
    "QuarticModel",
    "RunReport",
    "StmConfig",
    "SymTensor3",
    "__version__",
    "make_problem",
    "plan_with_replacement",
    "plan_without_replacement",
    "run",
    "solve",
]
