"""Sparse-representation classification and the NN / NS baselines.

A test vector is coded over a dictionary whose column blocks are the training
samples of each class; it is assigned to the class whose block alone
reconstructs it best.  The robust mode appends an identity block so that
sparse gross errors are absorbed by an explicit outlier vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from .errors import BsblError, ClassificationError, DimensionError, InputValidationError
from .solvers import SOLVERS, BlockPartition, SensingProblem, SolverOptions

SOLVER_ALIASES = {"bsbl": "bsbl", "l1": "l1", "src": "l1", "block_l1": "block_l1", "bsco": "block_l1"}
# relative tolerance under which two residuals count as tied
TIE_RTOL = 1e-12
CLASSIFY_MAX_ITERS = 100
CLASSIFY_TOL = 1e-4
CLASSIFY_EPSILON = 0.05


@dataclass(frozen=True)
class Dictionary:
    """Unit-norm training columns grouped contiguously by class (ascending label)."""

    phi: np.ndarray
    partition: BlockPartition
    class_ids: tuple
    column_norms: np.ndarray

    @property
    def m(self) -> int:
        return self.phi.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)


@dataclass(frozen=True)
class AugmentedDictionary:
    base: Dictionary
    phi_bar: np.ndarray
    partition: BlockPartition


@dataclass
class ClassificationResult:
    predicted_class: Any
    predicted_index: int
    residuals: np.ndarray
    x_hat: np.ndarray
    epsilon_hat: Optional[np.ndarray] = None
    solver_name: str = ""
    converged: bool = True


def build_dictionary(features: Sequence) -> Dictionary:
    """Stack ``(vector, label)`` pairs into a class-blocked, column-normalized dictionary."""
    features = list(features)
    if not features:
        raise InputValidationError("no training features")
    lengths = {np.asarray(v).reshape(-1).shape[0] for v, _ in features}
    if len(lengths) != 1:
        raise DimensionError(f"feature vectors have inconsistent lengths {sorted(lengths)}")
    labels = sorted({lab for _, lab in features})
    if len(labels) < 2:
        raise InputValidationError("a dictionary needs at least two classes")
    cols, sizes = [], []
    for lab in labels:
        members = [(i, np.asarray(v, dtype=float).reshape(-1)) for i, (v, l) in enumerate(features) if l == lab]
        sizes.append(len(members))
        for i, v in members:
            if not np.all(np.isfinite(v)):
                raise InputValidationError(f"sample {i} (class {lab!r}) has non-finite entries")
            if np.linalg.norm(v) == 0:
                raise InputValidationError(f"sample {i} (class {lab!r}) is the zero vector")
            cols.append(v)
    phi = np.stack(cols, axis=1)
    norms = np.linalg.norm(phi, axis=0)
    phi = phi / norms
    phi.setflags(write=False)
    norms.setflags(write=False)
    return Dictionary(phi=phi, partition=BlockPartition(sizes), class_ids=tuple(labels), column_norms=norms)


def dictionary_from_arrays(vectors: np.ndarray, labels: Sequence) -> Dictionary:
    return build_dictionary(list(zip(np.asarray(vectors, dtype=float), labels)))


def augment_dictionary(d: Dictionary, outlier_block: int | None = None) -> AugmentedDictionary:
    """``[Phi, I]`` with the identity as one block of size ``m``.

    ``outlier_block`` splits the identity into blocks of that size instead
    (the last one may be shorter); 1 gives an elementwise outlier prior.
    """
    phi_bar = np.hstack([d.phi, np.eye(d.m)])
    phi_bar.setflags(write=False)
    size = d.m if outlier_block is None else int(outlier_block)
    if not 1 <= size <= d.m:
        raise InputValidationError(f"outlier_block must lie in [1, {d.m}], got {outlier_block}")
    sizes = [size] * (d.m // size) + ([d.m % size] if d.m % size else [])
    return AugmentedDictionary(base=d, phi_bar=phi_bar, partition=d.partition.append(*sizes))


def class_restrict(x: np.ndarray, j: int, partition: BlockPartition) -> np.ndarray:
    """Keep the coefficients of block ``j`` and zero the rest."""
    x = np.asarray(x)
    if x.shape[0] != partition.total:
        raise DimensionError(f"x has length {x.shape[0]}, partition covers {partition.total}")
    sl = partition.slice(j)
    out = np.zeros_like(x)
    out[sl] = x[sl]
    return out


def argmin_lowest(values) -> int:
    """Index of the smallest value; near-ties go to the lowest index."""
    values = np.asarray(values, dtype=float)
    best = values.min()
    tol = TIE_RTOL * max(abs(best), 1.0)
    return int(np.flatnonzero(values <= best + tol)[0])


def _normalize(y, m):
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != m:
        raise DimensionError(f"test vector has length {y.shape[0]}, dictionary rows are {m}")
    if not np.all(np.isfinite(y)):
        raise InputValidationError("test vector has non-finite entries")
    norm = np.linalg.norm(y)
    return y / norm if norm > 0 else y


def _run_solver(solver: str, problem: SensingProblem, opts: SolverOptions):
    try:
        fn = SOLVERS[SOLVER_ALIASES[solver]]
    except KeyError:
        raise InputValidationError(f"unknown solver {solver!r}; choose from {sorted(SOLVER_ALIASES)}") from None
    try:
        return fn(problem, opts)
    except BsblError as exc:
        raise ClassificationError(f"{solver} solver failed: {exc}") from exc


def _class_residuals(phi, partition, x, target) -> np.ndarray:
    res = np.empty(len(partition))
    for j, sl in enumerate(partition.slices()):
        res[j] = np.linalg.norm(target - phi[:, sl] @ x[sl])
    return res


def classify(d: Dictionary, y, solver: str = "bsbl", opts: SolverOptions | None = None) -> ClassificationResult:
    """Code unit-normalized ``y`` over ``d`` and pick the class with the smallest residual."""
    opts = opts or default_options(solver)
    y = _normalize(y, d.m)
    result = _run_solver(solver, SensingProblem(d.phi, y, d.partition), opts)
    residuals = _class_residuals(d.phi, d.partition, result.x_hat, y)
    idx = argmin_lowest(residuals)
    return ClassificationResult(
        predicted_class=d.class_ids[idx], predicted_index=idx, residuals=residuals,
        x_hat=result.x_hat, solver_name=SOLVER_ALIASES[solver], converged=result.converged,
    )


def classify_robust(
    d: Dictionary, y, solver: str = "bsbl", opts: SolverOptions | None = None, outlier_block: int | None = None
) -> ClassificationResult:
    """Classify with an explicit sparse-error block.

    Solves over ``[Phi, I]``; the last ``m`` coefficients are the outlier
    estimate ``e`` and the residual of class ``j`` is ``||y - e - Phi_j x_j||``.
    By default ``e`` forms a single block; see :func:`augment_dictionary`.
    """
    opts = opts or default_options(solver)
    aug = augment_dictionary(d, outlier_block)
    y = _normalize(y, d.m)
    result = _run_solver(solver, SensingProblem(aug.phi_bar, y, aug.partition), opts)
    n = d.phi.shape[1]
    x_hat, eps_hat = result.x_hat[:n], result.x_hat[n:]
    residuals = _class_residuals(d.phi, d.partition, x_hat, y - eps_hat)
    idx = argmin_lowest(residuals)
    return ClassificationResult(
        predicted_class=d.class_ids[idx], predicted_index=idx, residuals=residuals,
        x_hat=x_hat, epsilon_hat=eps_hat, solver_name=SOLVER_ALIASES[solver], converged=result.converged,
    )


def default_options(solver: str) -> SolverOptions:
    """Solver options used by the classifiers unless overridden.

    Decisions only need the ranking of class residuals, so BSBL stops at a
    relative change of 1e-4 or 100 iterations.  The convex baselines get a
    residual tolerance of 0.05 on the unit-norm test vector.
    """
    if SOLVER_ALIASES.get(solver) == "bsbl":
        return SolverOptions(max_iters=CLASSIFY_MAX_ITERS, convergence_tol=CLASSIFY_TOL)
    return SolverOptions(epsilon=CLASSIFY_EPSILON)


# ---------------------------------------------------------------------------
# classical baselines


def _train_arrays(train, labels):
    x = np.asarray(train, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InputValidationError("empty training set")
    labels = list(labels)
    if len(labels) != x.shape[0]:
        raise DimensionError("one label per training vector required")
    return x, labels


def nn_classify(train, labels, y):
    """Label of the nearest training vector in l2; ties go to the lowest class."""
    x, labels = _train_arrays(train, labels)
    dist = np.linalg.norm(x - np.asarray(y, dtype=float).reshape(1, -1), axis=1)
    best = dist.min()
    tied = np.flatnonzero(dist <= best + TIE_RTOL * max(best, 1.0))
    return min(labels[i] for i in tied)


@dataclass
class NSResult:
    predicted_class: Any
    residuals: np.ndarray
    class_ids: tuple
    clipped: bool = False
    dims: tuple = field(default_factory=tuple)


class NearestSubspace:
    """Per-class principal subspaces; reusable across many test vectors."""

    def __init__(self, train, labels, subspace_dim: int = 9):
        x, labels = _train_arrays(train, labels)
        if subspace_dim < 0:
            raise InputValidationError("subspace_dim must be >= 0")
        self.class_ids = tuple(sorted(set(labels)))
        self.bases = []
        self.clipped = False
        dims = []
        labels_arr = np.array([self.class_ids.index(l) for l in labels])
        for c in range(len(self.class_ids)):
            cols = x[labels_arr == c].T  # (m, n_c)
            k = min(subspace_dim, cols.shape[1], cols.shape[0])
            if k < subspace_dim:
                self.clipped = True
            u, _, _ = np.linalg.svd(cols, full_matrices=False)
            self.bases.append(u[:, :k])
            dims.append(k)
        self.dims = tuple(dims)

    def classify(self, y) -> NSResult:
        y = np.asarray(y, dtype=float).reshape(-1)
        res = np.array([np.linalg.norm(y - b @ (b.T @ y)) for b in self.bases])
        idx = argmin_lowest(res)
        return NSResult(self.class_ids[idx], res, self.class_ids, self.clipped, self.dims)


def ns_classify(train, labels, y, subspace_dim: int = 9) -> NSResult:
    """Nearest-subspace rule with per-class rank-``subspace_dim`` SVD bases.

    Classes with fewer samples than ``subspace_dim`` use all their samples and
    set ``clipped`` on the result.
    """
    return NearestSubspace(train, labels, subspace_dim).classify(y)
