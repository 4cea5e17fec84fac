from .types import (
    BlockPartition,
    BsblHyperparams,
    SensingProblem,
    SolverOptions,
    SolverResult,
    ar1_toeplitz,
)
from .bsbl import bsbl_solve, compute_cost, em_update, initial_hyperparams, posterior_moments
from .convex import block_l1_solve, l1_solve
from .oracle import brute_force_oracle

SOLVERS = {
    "bsbl": bsbl_solve,
    "l1": l1_solve,
    "block_l1": block_l1_solve,
}

__all__ = [
    "BlockPartition",
    "BsblHyperparams",
    "SensingProblem",
    "SolverOptions",
    "SolverResult",
    "SOLVERS",
    "ar1_toeplitz",
    "block_l1_solve",
    "brute_force_oracle",
    "bsbl_solve",
    "compute_cost",
    "em_update",
    "initial_hyperparams",
    "l1_solve",
    "posterior_moments",
]
