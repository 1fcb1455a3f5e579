"""Projection-free greedy optimization over structured atom sets.

Solver families over a shared atom/LMO abstraction: Frank-Wolfe variants on
convex hulls, matching-pursuit variants on linear spans (with acceleration),
non-negative MP on conic hulls, a stochastic homotopy conditional gradient
method for affinely-constrained composite problems, and boosting variational
inference for one-dimensional targets.
"""

from . import atoms, bench, boostvi, core, fw, mp, nnmp, objectives, shcgm
from .core import (AtomicCombination, ConvergenceTrace, RateFit, finite_diff_check,
                   fit_rate, fixed_fw_step, make_rng, step_on_upper_bound)

__version__ = "0.1.0"

__all__ = [
    "atoms", "bench", "boostvi", "core", "fw", "mp", "nnmp", "objectives",
    "shcgm", "AtomicCombination", "ConvergenceTrace", "RateFit",
    "finite_diff_check", "fit_rate", "fixed_fw_step", "make_rng",
    "step_on_upper_bound",
]
