"""Data types shared by the block-sparse solvers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import DimensionError, InputValidationError


class BlockPartition:
    """Contiguous, non-overlapping block structure over ``0..n-1``.

    Parameters
    ----------
    sizes : sequence of int
        Block lengths ``n_1, ..., n_K``; each must be at least 1.
    """

    __slots__ = ("sizes", "offsets", "total")

    def __init__(self, sizes: Sequence[int]):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) == 0:
            raise InputValidationError("a partition needs at least one block")
        if any(s < 1 for s in sizes):
            raise InputValidationError(f"block sizes must be >= 1, got {sizes}")
        self.sizes = sizes
        self.offsets = tuple(int(o) for o in np.concatenate([[0], np.cumsum(sizes)[:-1]]))
        self.total = int(sum(sizes))

    @classmethod
    def uniform(cls, n_blocks: int, size: int) -> "BlockPartition":
        return cls([size] * n_blocks)

    def __len__(self):
        return len(self.sizes)

    def __eq__(self, other):
        return isinstance(other, BlockPartition) and self.sizes == other.sizes

    def __hash__(self):
        return hash(self.sizes)

    def __repr__(self):
        return f"BlockPartition({list(self.sizes)})"

    def slice(self, i: int) -> slice:
        if not 0 <= i < len(self.sizes):
            raise IndexError(f"block index {i} out of range for {len(self.sizes)} blocks")
        start = self.offsets[i]
        return slice(start, start + self.sizes[i])

    def slices(self):
        return [self.slice(i) for i in range(len(self.sizes))]

    def block_ids(self) -> np.ndarray:
        """Block index of every coordinate, length ``total``."""
        return np.repeat(np.arange(len(self.sizes)), self.sizes)

    def append(self, *sizes: int) -> "BlockPartition":
        return BlockPartition(self.sizes + tuple(sizes))

    def block_norms(self, x: np.ndarray) -> np.ndarray:
        return np.sqrt(np.add.reduceat(np.asarray(x, dtype=float) ** 2, list(self.offsets)))

    def support(self, x: np.ndarray, tol: float = 0.0) -> list[int]:
        """Indices of blocks whose l2 norm exceeds ``tol``."""
        return [int(i) for i in np.flatnonzero(self.block_norms(x) > tol)]


@dataclass(frozen=True)
class SensingProblem:
    """``y = phi @ x + noise`` with ``x`` block-structured by ``partition``."""

    phi: np.ndarray
    y: np.ndarray
    partition: BlockPartition

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        y = np.array(self.y, dtype=float).reshape(-1)
        if phi.ndim != 2:
            raise DimensionError(f"phi must be 2-D, got shape {phi.shape}")
        if phi.shape[0] < 1 or phi.shape[1] < 1:
            raise DimensionError(f"phi must be non-empty, got shape {phi.shape}")
        if phi.shape[1] != self.partition.total:
            raise DimensionError(
                f"phi has {phi.shape[1]} columns but the partition covers {self.partition.total}"
            )
        if y.shape[0] != phi.shape[0]:
            raise DimensionError(f"y has length {y.shape[0]}, phi has {phi.shape[0]} rows")
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(y))):
            raise InputValidationError("phi and y must contain only finite values")
        phi.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "y", y)

    @property
    def m(self) -> int:
        return self.phi.shape[0]

    @property
    def n(self) -> int:
        return self.phi.shape[1]


def ar1_toeplitz(r: float, size: int) -> np.ndarray:
    """First-order autoregressive correlation matrix ``B[p, q] = r**|p - q|``."""
    idx = np.arange(size)
    return float(r) ** np.abs(idx[:, None] - idx[None, :])


@dataclass
class BsblHyperparams:
    """BSBL hyperparameters: block scales, AR(1) correlations, noise variance."""

    gamma: np.ndarray
    corr: np.ndarray
    lam: float
    active: np.ndarray

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float).copy()
        self.corr = np.asarray(self.corr, dtype=float).copy()
        self.active = np.asarray(self.active, dtype=bool).copy()
        self.lam = float(self.lam)
        if np.any(self.gamma < 0) or not np.all(np.isfinite(self.gamma)):
            raise InputValidationError("gamma must be finite and nonnegative")
        if np.any(np.abs(self.corr) >= 1):
            raise InputValidationError("correlation coefficients must lie in (-1, 1)")
        if not self.lam > 0:
            raise InputValidationError(f"lambda must be positive, got {self.lam}")
        self.gamma[~self.active] = 0.0
        self.active &= self.gamma > 0

    @classmethod
    def initial(cls, n_blocks: int, lam: float, gamma: float = 1.0) -> "BsblHyperparams":
        return cls(
            gamma=np.full(n_blocks, float(gamma)),
            corr=np.zeros(n_blocks),
            lam=lam,
            active=np.ones(n_blocks, dtype=bool),
        )

    @classmethod
    def _trusted(cls, gamma, corr, lam, active) -> "BsblHyperparams":
        """Construct without validation; for solver internals that maintain the invariants."""
        obj = cls.__new__(cls)
        obj.gamma, obj.corr, obj.lam, obj.active = gamma, corr, float(lam), active
        return obj

    def copy(self) -> "BsblHyperparams":
        return BsblHyperparams(self.gamma, self.corr, self.lam, self.active)

    def block_cov(self, i: int, size: int) -> np.ndarray:
        """Correlation matrix ``B_i`` (unscaled by ``gamma_i``)."""
        return ar1_toeplitz(self.corr[i], size)

    def prior_cov(self, partition: BlockPartition) -> np.ndarray:
        """Dense ``Sigma0 = blockdiag(gamma_i B_i)``."""
        sigma0 = np.zeros((partition.total, partition.total))
        for i, sl in enumerate(partition.slices()):
            if self.active[i]:
                sigma0[sl, sl] = self.gamma[i] * self.block_cov(i, partition.sizes[i])
        return sigma0


@dataclass
class SolverOptions:
    """Knobs shared by ``bsbl_solve``, ``l1_solve`` and ``block_l1_solve``.

    ``lam`` set to a positive value fixes the noise variance; ``None`` learns it.
    ``rho`` set to a positive value bypasses the epsilon-driven selection of the
    penalty in the convex baselines.
    """

    max_iters: int = 300
    prune_threshold: float = 1e-4
    convergence_tol: float = 1e-6
    lam: Optional[float] = None
    learn_correlation: bool = True
    epsilon: float = 0.0
    rho: Optional[float] = None
    # convex baselines only
    kkt_tol: float = 1e-6
    max_prox_iters: int = 20000

    def __post_init__(self):
        if self.max_iters < 1 or self.max_prox_iters < 1:
            raise InputValidationError("iteration caps must be >= 1")
        for name in ("prune_threshold", "convergence_tol", "kkt_tol"):
            if not getattr(self, name) > 0:
                raise InputValidationError(f"{name} must be positive")
        if self.lam is not None and not self.lam > 0:
            raise InputValidationError("fixed lambda must be positive")
        if self.epsilon < 0:
            raise InputValidationError("epsilon must be nonnegative")
        if self.rho is not None and not self.rho >= 0:
            raise InputValidationError("rho must be nonnegative")

    @property
    def learn_lambda(self) -> bool:
        return self.lam is None


@dataclass
class SolverResult:
    x_hat: np.ndarray
    gamma: np.ndarray
    iterations: int
    final_cost: float
    converged: bool
    cost_trace: list = field(default_factory=list)
    active: Optional[np.ndarray] = None
    hyper: Optional[BsblHyperparams] = None
    solver: str = "bsbl"
    rho: Optional[float] = None
    kkt_residual: Optional[float] = None

    def support(self, partition: BlockPartition, tol: float = 0.0) -> list[int]:
        return partition.support(self.x_hat, tol)

    def summary(self, partition: BlockPartition) -> str:
        lines = [
            f"solver:     {self.solver}",
            f"iterations: {self.iterations}",
            f"converged:  {self.converged}",
            f"final_cost: {self.final_cost:.10g}",
            "support:    {" + ", ".join(str(i) for i in self.support(partition)) + "}",
        ]
        if self.rho is not None:
            lines.append(f"rho:        {self.rho:.6g}")
        norms = partition.block_norms(self.x_hat)
        lines.append("block_norms: " + " ".join(f"{v:.6g}" for v in norms))
        return "\n".join(lines)
