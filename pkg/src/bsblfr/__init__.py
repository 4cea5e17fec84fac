"""Block sparse Bayesian learning and sparse-representation face classification."""

__version__ = "0.1.0"

from .classifier import (
    AugmentedDictionary,
    ClassificationResult,
    Dictionary,
    NearestSubspace,
    augment_dictionary,
    build_dictionary,
    class_restrict,
    classify,
    classify_robust,
    nn_classify,
    ns_classify,
)
from .errors import (
    BsblError,
    ClassificationError,
    CombinatorialGuardError,
    ConfigError,
    DimensionError,
    FormatError,
    InputValidationError,
    NumericError,
    SolverDivergenceError,
)
from .solvers import (
    BlockPartition,
    BsblHyperparams,
    SensingProblem,
    SolverOptions,
    SolverResult,
    block_l1_solve,
    brute_force_oracle,
    bsbl_solve,
    compute_cost,
    em_update,
    l1_solve,
    posterior_moments,
)

__all__ = [
    "__version__",
    "AugmentedDictionary",
    "BlockPartition",
    "BsblError",
    "BsblHyperparams",
    "ClassificationError",
    "ClassificationResult",
    "CombinatorialGuardError",
    "ConfigError",
    "Dictionary",
    "DimensionError",
    "FormatError",
    "InputValidationError",
    "NearestSubspace",
    "NumericError",
    "SensingProblem",
    "SolverDivergenceError",
    "SolverOptions",
    "SolverResult",
    "augment_dictionary",
    "block_l1_solve",
    "brute_force_oracle",
    "bsbl_solve",
    "build_dictionary",
    "class_restrict",
    "classify",
    "classify_robust",
    "compute_cost",
    "em_update",
    "l1_solve",
    "nn_classify",
    "ns_classify",
    "posterior_moments",
]
