"""lp-norm constrained fusion of one-class classifier scores."""

__version__ = "0.1.0"

from .core import FusionModel, fused_score, hinge_objective, hinge_subgradient, predict  # noqa: E402
from .solver import SolverConfig, fw_solve, lmo_lp_ball  # noqa: E402

__all__ = [
    "FusionModel",
    "SolverConfig",
    "fused_score",
    "fw_solve",
    "hinge_objective",
    "hinge_subgradient",
    "lmo_lp_ball",
    "predict",
]
