"""Block sparse Bayesian learning by expectation-maximization.

Each block ``x_i`` has prior ``N(0, gamma_i B_i)`` with ``B_i`` an AR(1)
Toeplitz matrix, and the noise is ``N(0, lam I)``.  The hyperparameters are
learned by minimizing the Type-II cost

    L(theta) = log|lam I + Phi Sigma0 Phi^T| + y^T (lam I + Phi Sigma0 Phi^T)^{-1} y

with EM.  The correlation update is accepted only when it does not decrease
the expected complete-data log-likelihood (generalized EM), and block pruning
is accepted only when it does not raise the cost, so every run produces a
non-increasing cost trace.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from ..errors import InputValidationError, NumericError, SolverDivergenceError
from .types import BsblHyperparams, SensingProblem, SolverOptions, SolverResult

log = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-8
CORR_CLIP = 0.99
# learned noise variance never drops below this fraction of the mean data energy
LAMBDA_FLOOR = 1e-12


class _Layout:
    """Column indices of the blocks, grouped by block size for batched algebra."""

    def __init__(self, problem: SensingProblem):
        part = problem.partition
        sizes = np.asarray(part.sizes)
        offsets = np.asarray(part.offsets)
        self.groups = []
        for size in np.unique(sizes):
            ids = np.flatnonzero(sizes == size)
            cols = offsets[ids][:, None] + np.arange(size)[None, :]
            lags = np.abs(np.arange(size)[:, None] - np.arange(size)[None, :])
            self.groups.append((int(size), ids, cols, lags))


def _toeplitz_stack(corr: np.ndarray, lags: np.ndarray) -> np.ndarray:
    # r ** |p - q| for every block; 0 ** 0 == 1 keeps the diagonal
    return corr[:, None, None] ** lags[None, :, :]


@dataclass
class _State:
    """Posterior summaries from one factorization of ``lam I + Phi Sigma0 Phi^T``.

    ``stats[i] = (tr M_i, M_i[0,0] + M_i[-1,-1], sum of the first superdiagonal
    of M_i)`` with ``M_i = Sigma_x,i + mu_i mu_i^T`` the posterior second moment
    of block ``i``; these are all the AR(1) EM updates need.
    """

    cost: float
    mu: np.ndarray
    stats: np.ndarray
    phi_sigma_phi_trace: float  # Tr(Sigma_x Phi^T Phi)


def _factor(hyper: BsblHyperparams, problem: SensingProblem, layout: _Layout):
    m = problem.m
    cov = hyper.lam * np.eye(m)
    parts = []
    for size, ids, cols, lags in layout.groups:
        sel = hyper.active[ids]
        if not sel.any():
            continue
        ids_a, cols_a = ids[sel], cols[sel]
        phi_b = problem.phi[:, cols_a]  # (m, c, size)
        s0 = hyper.gamma[ids_a][:, None, None] * _toeplitz_stack(hyper.corr[ids_a], lags)
        # batched matmul goes through BLAS; einsum here would not
        h = np.matmul(phi_b.transpose(1, 0, 2), s0).transpose(1, 0, 2)
        cov += h.reshape(m, -1) @ phi_b.reshape(m, -1).T
        parts.append((size, ids_a, cols_a, s0, h))
    cov = 0.5 * (cov + cov.T)
    try:
        chol = sla.cholesky(cov, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise NumericError("lam*I + Phi Sigma0 Phi^T is not positive definite") from exc
    if not np.all(np.isfinite(chol)):
        raise NumericError("non-finite Cholesky factor")
    return chol, parts


def _state(hyper: BsblHyperparams, problem: SensingProblem, layout: _Layout) -> _State:
    m, n = problem.m, problem.n
    chol, parts = _factor(hyper, problem, layout)
    w = sla.solve_triangular(chol, problem.y, lower=True, check_finite=False)
    cost = 2.0 * float(np.sum(np.log(np.diag(chol)))) + float(w @ w)
    mu = np.zeros(n)
    stats = np.full((len(problem.partition), 3), np.nan)
    for size, ids_a, cols_a, s0, h in parts:
        c = ids_a.shape[0]
        g = sla.solve_triangular(chol, h.reshape(m, -1), lower=True, check_finite=False).reshape(m, c, size)
        mu_b = np.einsum("mcs,m->cs", g, w)
        gt = g.transpose(1, 0, 2)
        sig = s0 - np.matmul(gt.transpose(0, 2, 1), gt)
        mu[cols_a] = mu_b
        d = np.einsum("css->c", sig) + np.sum(mu_b**2, axis=1)
        e = sig[:, 0, 0] + sig[:, -1, -1] + mu_b[:, 0] ** 2 + mu_b[:, -1] ** 2
        if size > 1:
            k = np.arange(size - 1)
            o = sig[:, k, k + 1].sum(axis=1) + np.sum(mu_b[:, :-1] * mu_b[:, 1:], axis=1)
        else:
            e = 0.5 * e
            o = np.zeros(c)
        stats[ids_a] = np.stack([d, e, o], axis=1)
    # Phi Sigma_x Phi^T = lam (I - lam C^{-1})
    chol_inv = sla.solve_triangular(chol, np.eye(m), lower=True, check_finite=False)
    tr_cinv = float(np.sum(chol_inv**2))
    trace_term = max(hyper.lam * (m - hyper.lam * tr_cinv), 0.0)
    return _State(cost=cost, mu=mu, stats=stats, phi_sigma_phi_trace=trace_term)


def compute_cost(hyper: BsblHyperparams, problem: SensingProblem) -> float:
    """Type-II cost ``log|C| + y^T C^{-1} y`` with ``C = lam I + Phi Sigma0 Phi^T``.

    Evaluated through a Cholesky factorization of ``C``; raises
    :class:`NumericError` if ``C`` is not positive definite.
    """
    _check_dims(hyper, problem)
    chol, _ = _factor(hyper, problem, _Layout(problem))
    w = sla.solve_triangular(chol, problem.y, lower=True, check_finite=False)
    return float(2.0 * np.sum(np.log(np.diag(chol))) + w @ w)


def posterior_moments(hyper: BsblHyperparams, problem: SensingProblem):
    """Gaussian posterior mean and covariance of ``x`` given ``y``.

    Rows and columns belonging to pruned blocks are zero.

    Returns
    -------
    mu : ndarray, shape (n,)
    sigma_x : ndarray, shape (n, n)
    """
    _check_dims(hyper, problem)
    part = problem.partition
    n = problem.n
    mu = np.zeros(n)
    sigma_x = np.zeros((n, n))
    active = np.flatnonzero(hyper.active)
    if active.size == 0:
        return mu, sigma_x
    idx = np.concatenate([np.arange(part.slice(i).start, part.slice(i).stop) for i in active])
    s0 = sla.block_diag(*[hyper.gamma[i] * hyper.block_cov(i, part.sizes[i]) for i in active])
    phi_a = problem.phi[:, idx]
    h = phi_a @ s0
    cov = hyper.lam * np.eye(problem.m) + h @ phi_a.T
    try:
        chol = sla.cholesky(0.5 * (cov + cov.T), lower=True)
    except sla.LinAlgError as exc:
        raise NumericError("lam*I + Phi Sigma0 Phi^T is not positive definite") from exc
    w = sla.solve_triangular(chol, problem.y, lower=True)
    g = sla.solve_triangular(chol, h, lower=True)
    mu[idx] = g.T @ w
    sa = s0 - g.T @ g
    sigma_x[np.ix_(idx, idx)] = 0.5 * (sa + sa.T)
    return mu, sigma_x


def _check_dims(hyper: BsblHyperparams, problem: SensingProblem):
    k = len(problem.partition)
    if hyper.gamma.shape != (k,) or hyper.corr.shape != (k,) or hyper.active.shape != (k,):
        raise InputValidationError(
            f"hyperparameters describe {hyper.gamma.shape[0]} blocks, problem has {k}"
        )


def _ar1_trace_inv(stats: np.ndarray, r, size: int):
    """``Tr(B(r)^{-1} M)`` from block statistics, via the tridiagonal AR(1) inverse."""
    d, e, o = stats[..., 0], stats[..., 1], stats[..., 2]
    if size == 1:
        return d
    return (d * (1.0 + r * r) - r * r * e - 2.0 * r * o) / (1.0 - r * r)


def _logdet_ar1(r, size: int):
    # |B| = (1 - r^2)^(size - 1) for the AR(1) Toeplitz matrix
    return (size - 1) * np.log1p(-r * r)


def _em_from_stats(
    hyper: BsblHyperparams,
    mu: np.ndarray,
    stats: np.ndarray,
    phi_sigma_phi_trace: float,
    problem: SensingProblem,
    layout: _Layout,
    learn_lambda: bool,
    learn_correlation: bool,
    lam_floor: float,
) -> BsblHyperparams:
    gamma = hyper.gamma.copy()
    corr = hyper.corr.copy()
    for size, ids, _, _ in layout.groups:
        ids_a = ids[hyper.active[ids]]
        if ids_a.size == 0:
            continue
        st = stats[ids_a]
        g_old_b = np.maximum(_ar1_trace_inv(st, corr[ids_a], size) / size, 0.0)
        gamma[ids_a] = g_old_b
        if not learn_correlation or size < 2:
            continue
        pos = g_old_b > 0
        if not pos.any():
            continue
        members, st, g_m = ids_a[pos], st[pos], g_old_b[pos]
        # lag-0 / lag-1 autocorrelation of the averaged normalized second moments
        m0 = np.mean(st[:, 0] / g_m) / size
        m1 = np.mean(st[:, 2] / g_m) / (size - 1)
        if not m0 > 0:
            continue
        r = float(np.clip(m1 / m0, -CORR_CLIP, CORR_CLIP))
        g_new = _ar1_trace_inv(st, r, size) / size
        if np.any(g_new <= 0):
            continue
        # generalized EM: keep r only if the expected log-prior does not get worse
        q_old = np.sum(size * np.log(g_m) + _logdet_ar1(corr[members], size))
        q_new = np.sum(size * np.log(g_new) + _logdet_ar1(r, size))
        if q_new <= q_old:
            corr[members] = r
            gamma[members] = g_new

    lam = hyper.lam
    if learn_lambda:
        resid = problem.y - problem.phi @ mu
        lam = max((float(resid @ resid) + phi_sigma_phi_trace) / problem.m, lam_floor)
    active = hyper.active & (gamma > 0)
    gamma[~active] = 0.0
    return BsblHyperparams._trusted(gamma, corr, lam, active)


def _block_stats(mu: np.ndarray, sigma_x: np.ndarray, problem: SensingProblem, active) -> np.ndarray:
    part = problem.partition
    stats = np.full((len(part), 3), np.nan)
    for i in np.flatnonzero(active):
        sl = part.slice(i)
        mom = sigma_x[sl, sl] + np.outer(mu[sl], mu[sl])
        mom = 0.5 * (mom + mom.T)
        diag = np.diag(mom)
        if part.sizes[i] == 1:
            stats[i] = (diag[0], diag[0], 0.0)
        else:
            stats[i] = (diag.sum(), diag[0] + diag[-1], np.diag(mom, 1).sum())
    return stats


def em_update(
    hyper: BsblHyperparams,
    mu: np.ndarray,
    sigma_x: np.ndarray,
    problem: SensingProblem,
    learn_lambda: bool = True,
    learn_correlation: bool = True,
    lam_floor: float = 0.0,
) -> BsblHyperparams:
    """One EM update of ``gamma``, ``corr`` and ``lam`` from posterior moments.

    ``mu`` and ``sigma_x`` are the posterior mean and covariance under ``hyper``
    (see :func:`posterior_moments`).  Blocks whose second moment vanishes get
    ``gamma = 0`` and are marked inactive.
    """
    _check_dims(hyper, problem)
    mu = np.asarray(mu, dtype=float)
    sigma_x = np.asarray(sigma_x, dtype=float)
    stats = _block_stats(mu, sigma_x, problem, hyper.active)
    trace_term = float(np.sum(sigma_x * (problem.phi.T @ problem.phi)))
    return _em_from_stats(
        hyper, mu, stats, trace_term, problem, _Layout(problem),
        learn_lambda=learn_lambda, learn_correlation=learn_correlation, lam_floor=lam_floor,
    )


def initial_hyperparams(problem: SensingProblem, opts: SolverOptions) -> BsblHyperparams:
    """Deterministic starting point.

    ``gamma_i = n ||y||^2 / ||Phi||_F^2`` (equal to ``||y||^2`` for unit-norm
    columns), ``corr = 0`` and ``lam = 0.01 ||y||^2 / m`` unless fixed.
    """
    energy = float(problem.y @ problem.y)
    gamma0 = problem.n * energy / float(np.sum(problem.phi**2))
    lam = opts.lam if opts.lam is not None else 0.01 * energy / problem.m
    return BsblHyperparams.initial(len(problem.partition), lam=lam, gamma=gamma0)


def _prune(hyper: BsblHyperparams, tau: float) -> BsblHyperparams:
    gmax = hyper.gamma.max() if hyper.gamma.size else 0.0
    drop = hyper.active & (hyper.gamma < tau * gmax)
    gamma = hyper.gamma.copy()
    gamma[drop] = 0.0
    return BsblHyperparams._trusted(gamma, hyper.corr.copy(), hyper.lam, hyper.active & ~drop)


def bsbl_solve(problem: SensingProblem, opts: SolverOptions | None = None) -> SolverResult:
    """Recover a block-sparse ``x`` from ``y = Phi x + n``.

    Iterates EM updates of the BSBL hyperparameters and returns the posterior
    mean under the final hyperparameters.  Blocks whose scale falls below
    ``opts.prune_threshold * max(gamma)`` are removed from the working set and
    come back as exact zeros.  Raises :class:`SolverDivergenceError` if the
    cost ever rises by more than a relative ``1e-8`` in one iteration.
    """
    opts = opts or SolverOptions()
    k = len(problem.partition)
    energy = float(problem.y @ problem.y)
    if energy == 0.0:
        lam = opts.lam if opts.lam is not None else 1.0
        hyper = BsblHyperparams(np.zeros(k), np.zeros(k), lam, np.zeros(k, dtype=bool))
        cost = problem.m * np.log(lam) if opts.lam is not None else float("-inf")
        return SolverResult(
            x_hat=np.zeros(problem.n), gamma=np.zeros(k), iterations=0, final_cost=cost,
            converged=True, cost_trace=[], active=hyper.active.copy(), hyper=hyper,
        )

    layout = _Layout(problem)
    lam_floor = LAMBDA_FLOOR * energy / problem.m
    hyper = initial_hyperparams(problem, opts)
    state = _state(hyper, problem, layout)
    trace = [state.cost]
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        new = _em_from_stats(
            hyper, state.mu, state.stats, state.phi_sigma_phi_trace, problem, layout,
            learn_lambda=opts.learn_lambda, learn_correlation=opts.learn_correlation,
            lam_floor=lam_floor,
        )
        new_state = _state(new, problem, layout)
        pruned = _prune(new, opts.prune_threshold)
        if pruned.active.sum() < new.active.sum():
            pruned_state = _state(pruned, problem, layout)
            if pruned_state.cost <= trace[-1]:
                new, new_state = pruned, pruned_state

        prev = trace[-1]
        trace.append(new_state.cost)
        if new_state.cost > prev + MONOTONE_SLACK * abs(prev):
            raise SolverDivergenceError(
                f"BSBL cost increased from {prev!r} to {new_state.cost!r} at iteration {it}", trace
            )
        step = np.linalg.norm(new_state.mu - state.mu)
        scale = np.linalg.norm(new_state.mu)
        hyper, state = new, new_state
        if step <= opts.convergence_tol * max(scale, np.finfo(float).tiny):
            converged = True
            break

    x_hat = state.mu.copy()
    x_hat[~np.repeat(hyper.active, problem.partition.sizes)] = 0.0
    log.debug("bsbl_solve: %d iterations, converged=%s, cost=%.6g", it, converged, trace[-1])
    return SolverResult(
        x_hat=x_hat, gamma=hyper.gamma.copy(), iterations=it, final_cost=trace[-1],
        converged=converged, cost_trace=trace, active=hyper.active.copy(), hyper=hyper,
        solver="bsbl",
    )
