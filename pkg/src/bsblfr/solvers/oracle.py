"""Exhaustive block-support search, used as a test oracle."""

from __future__ import annotations

from itertools import combinations
from math import comb

import numpy as np

from ..errors import CombinatorialGuardError
from .types import SensingProblem

MAX_CANDIDATES = 10**5
TIE_RTOL = 1e-9


def count_candidates(n_blocks: int, max_active_blocks: int) -> int:
    return sum(comb(n_blocks, s) for s in range(0, max_active_blocks + 1))


def brute_force_oracle(problem: SensingProblem, max_active_blocks: int) -> np.ndarray:
    """Best least-squares fit over every support of at most ``max_active_blocks`` blocks.

    Candidates are visited by support size, then lexicographically; the first one
    whose residual is within ``TIE_RTOL * ||y||`` of the smallest residual wins.
    """
    part = problem.partition
    k = len(part)
    max_active_blocks = min(int(max_active_blocks), k)
    if max_active_blocks < 0:
        raise ValueError("max_active_blocks must be >= 0")
    n_cand = count_candidates(k, max_active_blocks)
    if n_cand > MAX_CANDIDATES:
        raise CombinatorialGuardError(
            f"{n_cand} candidate supports exceed the guard of {MAX_CANDIDATES}"
        )

    y = problem.y
    results = []
    for size in range(max_active_blocks + 1):
        for support in combinations(range(k), size):
            x = np.zeros(problem.n)
            if support:
                cols = np.concatenate([np.arange(part.slice(i).start, part.slice(i).stop) for i in support])
                coef, *_ = np.linalg.lstsq(problem.phi[:, cols], y, rcond=None)
                x[cols] = coef
            res = float(np.linalg.norm(y - problem.phi @ x))
            results.append((res, x))

    best = min(r for r, _ in results)
    tol = TIE_RTOL * max(float(np.linalg.norm(y)), np.finfo(float).tiny)
    for res, x in results:
        if res <= best + tol:
            return x
    raise AssertionError("unreachable")
