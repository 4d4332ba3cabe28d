"""Sparse model discovery for chaotic systems with hidden variables.

Candidate right-hand sides are sparse combinations of monomials. States and
coefficients are estimated jointly by variational annealing of a
collocation action, and small coefficients are hard-thresholded away at
every annealing step.
"""

from .action import ActionProblem, TrajectoryEstimate, action, action_gradient
from .anneal import AnnealSchedule, CandidatePool, anneal_once, dahsi_sweep, down_select, refit_parameters
from .dynamics import Dataset, get_preset, make_dataset, simulate_rk4
from .estimator import DAHSI
from .library import CandidateModel, FunctionLibrary, build_monomial_library, model_to_text
from .validation import information_criteria, make_segments, recovery_rate

__version__ = "0.1.0"

__all__ = [
    "ActionProblem", "AnnealSchedule", "CandidateModel", "CandidatePool", "DAHSI", "Dataset",
    "FunctionLibrary", "TrajectoryEstimate", "action", "action_gradient", "anneal_once",
    "build_monomial_library", "dahsi_sweep", "down_select", "get_preset", "information_criteria",
    "make_dataset", "make_segments", "model_to_text", "recovery_rate", "refit_parameters",
    "simulate_rk4",
]
