"""Seeded random block-sparse recovery instances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import BlockPartition, SensingProblem, ar1_toeplitz


@dataclass(frozen=True)
class PlantedInstance:
    problem: SensingProblem
    x_true: np.ndarray
    support: tuple


def planted_instance(
    m: int,
    n_blocks: int,
    block_size: int,
    n_active: int = 1,
    corr: float = 0.8,
    snr_db: float | None = None,
    seed: int = 0,
    support=None,
) -> PlantedInstance:
    """Gaussian ``Phi`` (m x K*b) with ``n_active`` AR(1)-correlated nonzero blocks.

    ``snr_db=None`` gives noiseless measurements.  ``support`` pins the active
    blocks; otherwise they are drawn at random.
    """
    rng = np.random.default_rng(seed)
    part = BlockPartition.uniform(n_blocks, block_size)
    phi = rng.standard_normal((m, part.total))
    if support is None:
        support = tuple(sorted(int(i) for i in rng.choice(n_blocks, size=n_active, replace=False)))
    else:
        support = tuple(sorted(int(i) for i in support))
    chol = np.linalg.cholesky(ar1_toeplitz(corr, block_size))
    x = np.zeros(part.total)
    for i in support:
        x[part.slice(i)] = chol @ rng.standard_normal(block_size)
    y = phi @ x
    if snr_db is not None:
        noise = rng.standard_normal(m)
        noise *= np.linalg.norm(y) / np.linalg.norm(noise) * 10.0 ** (-snr_db / 20.0)
        y = y + noise
    return PlantedInstance(SensingProblem(phi, y, part), x, support)


def nmse(x_hat: np.ndarray, x_true: np.ndarray) -> float:
    return float(np.sum((x_hat - x_true) ** 2) / np.sum(x_true**2))


def relative_error(x_hat: np.ndarray, x_ref: np.ndarray) -> float:
    den = np.linalg.norm(x_ref)
    if den == 0:
        return float(np.linalg.norm(x_hat))
    return float(np.linalg.norm(x_hat - x_ref) / den)


@dataclass(frozen=True)
class OracleCheck:
    solver: str
    matches: int
    total: int
    errors: tuple  # relative l2 error per instance


def oracle_equivalence(n_instances: int = 20, seed: int = 0, tol: float = 1e-3) -> list[OracleCheck]:
    """Compare BSBL and group lasso with the exhaustive oracle on noiseless planted problems.

    Instances are ``m = 10``, four blocks of four, one planted block, seeds
    ``seed .. seed + n_instances - 1``.
    """
    from .bsbl import bsbl_solve
    from .convex import block_l1_solve
    from .oracle import brute_force_oracle

    errors = {"bsbl": [], "block_l1": []}
    for s in range(seed, seed + n_instances):
        problem = planted_instance(10, 4, 4, n_active=1, seed=s).problem
        ref = brute_force_oracle(problem, 1)
        errors["bsbl"].append(relative_error(bsbl_solve(problem).x_hat, ref))
        errors["block_l1"].append(relative_error(block_l1_solve(problem).x_hat, ref))
    return [
        OracleCheck(name, sum(e < tol for e in errs), n_instances, tuple(errs))
        for name, errs in errors.items()
    ]
