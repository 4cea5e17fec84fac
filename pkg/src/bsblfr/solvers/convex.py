"""Convex baselines: lasso (l1) and group lasso (mixed l2/l1) by accelerated proximal gradient.

Both solve the penalized form

    min_x  0.5 ||y - Phi x||^2 + rho * R(x)

with ``R = ||x||_1`` or ``R = sum_j ||x_j||_2``.  The noise-constrained form
``min R(x) s.t. ||y - Phi x|| <= eps`` is handled by bisecting ``rho`` until the
residual norm lands in ``[0.9 eps, 1.1 eps]``.
"""

from __future__ import annotations

import numpy as np

from .homotopy import lasso_homotopy
from .types import BlockPartition, SensingProblem, SolverOptions, SolverResult

EPS_ZERO_RHO_FACTOR = 1e-6
BISECTION_STEPS = 20
# bisection probes only need the residual norm, so they run at a looser KKT tolerance
PROBE_KKT_TOL = 1e-3
_CHECK_EVERY = 5
_NEWTON_STEPS = 30
_POLISH_MAX_COND = 1e10


def soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def group_soft_threshold(v: np.ndarray, t: float, partition: BlockPartition) -> np.ndarray:
    norms = partition.block_norms(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > t, 1.0 - t / norms, 0.0)
    return v * np.repeat(scale, partition.sizes)


class _Penalized:
    """Accelerated proximal gradient for one fixed ``rho``; reusable across rho values."""

    def __init__(self, problem: SensingProblem, groups: BlockPartition | None):
        self.problem = problem
        self.groups = groups
        self.gram = problem.phi.T @ problem.phi
        self.corr = problem.phi.T @ problem.y
        self.lipschitz = max(float(np.linalg.eigvalsh(self.gram)[-1]), np.finfo(float).tiny)
        self.scale = max(float(np.max(np.abs(self.corr))), np.finfo(float).tiny)

    def prox(self, v, t):
        if self.groups is None:
            return soft_threshold(v, t)
        return group_soft_threshold(v, t, self.groups)

    def penalty(self, x):
        if self.groups is None:
            return float(np.sum(np.abs(x)))
        return float(np.sum(self.groups.block_norms(x)))

    def objective(self, x, rho):
        r = self.problem.y - self.problem.phi @ x
        return 0.5 * float(r @ r) + rho * self.penalty(x)

    def kkt(self, x, rho):
        """Norm of the gradient mapping relative to the penalty weight.

        Measured against ``min(rho, ||Phi^T y||_inf)`` so that small penalties
        are not declared converged before the penalty term has acted.
        """
        step = 1.0 / self.lipschitz
        grad = self.gram @ x - self.corr
        gmap = (x - self.prox(x - step * grad, step * rho)) * self.lipschitz
        return float(np.linalg.norm(gmap)) / max(min(rho, self.scale), np.finfo(float).tiny)

    def _active(self, x):
        if self.groups is None:
            return tuple(np.flatnonzero(x))
        return tuple(np.flatnonzero(self.groups.block_norms(x) > 0))

    def polish(self, x, rho):
        """Solve the problem restricted to the support of ``x`` exactly.

        On a fixed support the objective is smooth: for the lasso the signs are
        frozen and the optimum is one linear solve; for the group lasso a few
        damped Newton steps are taken.  Returns ``None`` when the restricted
        solution leaves the support (signs flip or a group collapses), or when
        the support is degenerate and the restricted optimum is not unique.
        """
        active = self._active(x)
        if not active:
            return None
        if self.groups is None:
            idx = np.asarray(active)
            gram = self.gram[np.ix_(idx, idx)]
            if np.linalg.cond(gram) > _POLISH_MAX_COND:
                return None
            signs = np.sign(x[idx])
            xa = np.linalg.solve(gram, self.corr[idx] - rho * signs)
            if np.any(np.sign(xa) != signs):
                return None
            out = np.zeros_like(x)
            out[idx] = xa
            return out
        return self._polish_groups(x, rho, active)

    def _polish_groups(self, x, rho, active):
        part = self.groups
        idx = np.concatenate([np.arange(part.slice(g).start, part.slice(g).stop) for g in active])
        sizes = [part.sizes[g] for g in active]
        bounds = np.cumsum([0] + sizes)
        gram = self.gram[np.ix_(idx, idx)]
        corr = self.corr[idx]

        def objective(v):
            norms = [np.linalg.norm(v[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
            return 0.5 * v @ gram @ v - corr @ v + rho * sum(norms), norms

        v = x[idx].copy()
        f, norms = objective(v)
        for _ in range(_NEWTON_STEPS):
            if min(norms) == 0:
                return None
            grad = gram @ v - corr
            hess = gram.copy()
            for (a, b), nrm in zip(zip(bounds[:-1], bounds[1:]), norms):
                u = v[a:b] / nrm
                grad[a:b] += rho * u
                hess[a:b, a:b] += (rho / nrm) * (np.eye(b - a) - np.outer(u, u))
            if np.linalg.cond(hess) > _POLISH_MAX_COND:
                return None  # flat directions: the restricted optimum is not unique
            direction = np.linalg.solve(hess, grad)
            step = 1.0
            while step > 1e-10:
                cand = v - step * direction
                f_new, norms_new = objective(cand)
                if f_new <= f:
                    break
                step *= 0.5
            else:
                break
            converged = f - f_new <= 1e-15 * max(abs(f), 1.0)
            v, f, norms = cand, f_new, norms_new
            if converged:
                break
        if min(norms) == 0:
            return None
        out = np.zeros_like(x)
        out[idx] = v
        return out

    def solve(self, rho, x0, tol, max_iters):
        step = 1.0 / self.lipschitz
        x = x0.copy()
        z = x.copy()
        t = 1.0
        trace = []
        kkt = self.kkt(x, rho)
        it = 0
        last_active, tried = None, set()
        while kkt >= tol and it < max_iters:
            it += 1
            grad = self.gram @ z - self.corr
            x_new = self.prox(z - step * grad, step * rho)
            # gradient-based adaptive restart
            if np.dot(z - x_new, x_new - x) > 0:
                t = 1.0
                z = x_new
            else:
                t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
                z = x_new + ((t - 1.0) / t_new) * (x_new - x)
                t = t_new
            x = x_new
            if it % _CHECK_EVERY == 0:
                kkt = self.kkt(x, rho)
                trace.append(self.objective(x, rho))
                active = self._active(x)
                if kkt >= tol and active == last_active and active not in tried:
                    # support looks settled: try to finish it off exactly
                    tried.add(active)
                    cand = self.polish(x, rho)
                    if cand is not None:
                        cand_kkt = self.kkt(cand, rho)
                        if cand_kkt < kkt:
                            x, z, t, kkt = cand, cand.copy(), 1.0, cand_kkt
                            trace.append(self.objective(x, rho))
                last_active = active
        if it % _CHECK_EVERY:
            kkt = self.kkt(x, rho)
        return x, it, kkt, trace

    def solve_continuation(self, rho, x0, tol, max_iters):
        """Warm-started path from a large penalty down to ``rho``."""
        rho_max = self.null_threshold()
        total = 0
        x = x0
        if rho < rho_max and not np.any(x0):
            stages = []
            r = 0.5 * rho_max
            while r > 10.0 * rho:
                stages.append(r)
                r /= 10.0
            for r in stages:
                x, it, _, _ = self.solve(r, x, max(tol, 1e-3), max_iters)
                total += it
        x, it, kkt, trace = self.solve(rho, x, tol, max(max_iters - total, 1))
        return x, total + it, kkt, trace

    def null_threshold(self):
        """Smallest ``rho`` for which ``x = 0`` is optimal."""
        if self.groups is None:
            return float(np.max(np.abs(self.corr)))
        return float(np.max(self.groups.block_norms(self.corr)))


def _residual_norm(problem, x):
    return float(np.linalg.norm(problem.y - problem.phi @ x))


def _solve(problem: SensingProblem, opts: SolverOptions, groups, name) -> SolverResult:
    solver = _Penalized(problem, groups)
    x0 = np.zeros(problem.n)
    if opts.rho is not None:
        rho = float(opts.rho)
    elif opts.epsilon == 0.0:
        rho = EPS_ZERO_RHO_FACTOR * float(np.max(np.abs(solver.corr)))
    else:
        rho = None

    path = None
    if groups is None:
        path = _lasso_start(problem, opts, rho)
    if path is not None:
        # the homotopy point is already optimal; the proximal loop only certifies it
        rho = path.rho
        x, iters, kkt, trace = solver.solve(rho, path.x, opts.kkt_tol, opts.max_prox_iters)
    elif rho is not None:
        x, iters, kkt, trace = solver.solve_continuation(rho, x0, opts.kkt_tol, opts.max_prox_iters)
    else:
        x, iters, kkt, trace, rho = _bisect_rho(solver, problem, opts)

    return SolverResult(
        x_hat=x,
        gamma=np.zeros(0),
        iterations=iters,
        final_cost=solver.objective(x, rho),
        converged=bool(kkt < opts.kkt_tol),
        cost_trace=trace,
        solver=name,
        rho=rho,
        kkt_residual=kkt,
    )


def _lasso_start(problem, opts, rho):
    """Exact lasso point for the requested penalty or residual level, or ``None``."""
    if rho is not None:
        return lasso_homotopy(problem.phi, problem.y, rho_target=rho)
    if _least_squares_residual(problem) > 1.1 * opts.epsilon:
        return None  # infeasible band; handled by _bisect_rho
    if np.linalg.norm(problem.y) <= 1.1 * opts.epsilon:
        return None
    return lasso_homotopy(problem.phi, problem.y, eps_target=opts.epsilon)


def _least_squares_residual(problem):
    coef, *_ = np.linalg.lstsq(problem.phi, problem.y, rcond=None)
    return _residual_norm(problem, coef)


def _bisect_rho(solver: _Penalized, problem: SensingProblem, opts: SolverOptions):
    eps = opts.epsilon
    lo_band, hi_band = 0.9 * eps, 1.1 * eps
    rho_hi = solver.null_threshold()
    if rho_hi == 0.0 or np.linalg.norm(problem.y) <= hi_band:
        x = np.zeros(problem.n)
        return x, 0, solver.kkt(x, rho_hi), [], rho_hi
    rho_floor = EPS_ZERO_RHO_FACTOR * solver.scale
    if _least_squares_residual(problem) > hi_band:
        # no x reaches the band; fall back to the epsilon = 0 penalty
        x, it, kkt, trace = solver.solve_continuation(rho_floor, np.zeros(problem.n), opts.kkt_tol, opts.max_prox_iters)
        return x, it, kkt, trace, rho_floor
    log_lo, log_hi = np.log(rho_hi * 1e-8), np.log(rho_hi)
    total = 0
    best = None
    x_warm = np.zeros(problem.n)
    probe_tol = max(opts.kkt_tol, PROBE_KKT_TOL)
    for _ in range(BISECTION_STEPS):
        rho = float(np.exp(0.5 * (log_lo + log_hi)))
        x, it, _, _ = solver.solve_continuation(rho, x_warm, probe_tol, opts.max_prox_iters)
        total += it
        res = _residual_norm(problem, x)
        if res <= hi_band and (best is None or abs(res - eps) < abs(best[2] - eps)):
            best = (x, rho, res)
        if lo_band <= res <= hi_band:
            best = (x, rho, res)
            break
        if res > hi_band:
            log_hi = np.log(rho)
        else:
            log_lo = np.log(rho)
        x_warm = x
    if best is None:
        best = (x, rho, res)
    x, rho, _ = best
    # polish the selected penalty to the requested tolerance
    x, it, kkt, trace = solver.solve(rho, x, opts.kkt_tol, opts.max_prox_iters)
    return x, total + it, kkt, trace, rho


def l1_solve(problem: SensingProblem, opts: SolverOptions | None = None) -> SolverResult:
    """Lasso / basis pursuit denoising baseline (the SRC solver).

    The penalty is ``opts.rho`` when given; otherwise it is chosen from
    ``opts.epsilon`` (``1e-6 ||Phi^T y||_inf`` when ``epsilon == 0``).
    ``converged`` is false if the iteration cap is hit before the KKT residual
    drops below ``opts.kkt_tol``; the iterate is still returned.
    """
    return _solve(problem, opts or SolverOptions(), None, "l1")


def block_l1_solve(problem: SensingProblem, opts: SolverOptions | None = None) -> SolverResult:
    """Group-lasso baseline with groups given by ``problem.partition`` (BSCO)."""
    return _solve(problem, opts or SolverOptions(), problem.partition, "block_l1")
