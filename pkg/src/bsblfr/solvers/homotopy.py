"""Exact lasso regularization path by homotopy (LARS with sign-violation drops).

The lasso solution ``x(rho)`` is piecewise linear in ``rho``.  Starting from
``rho = ||Phi^T y||_inf`` with ``x = 0``, the path is followed downward one
breakpoint at a time: a coordinate joins when its correlation reaches the
current penalty and leaves when its coefficient crosses zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_TINY = 1e-12


@dataclass
class PathPoint:
    x: np.ndarray
    rho: float
    residual_norm: float


def _step_to(x, active, d, delta):
    out = x.copy()
    out[active] += delta * d
    return out


def lasso_homotopy(phi: np.ndarray, y: np.ndarray, rho_target: float = 0.0, eps_target: float = 0.0,
                   max_steps: int | None = None) -> PathPoint | None:
    """Follow the lasso path until ``rho`` reaches ``rho_target`` or the residual norm reaches ``eps_target``.

    Returns ``None`` if the path breaks down numerically (singular active
    Gram matrix), in which case the caller should use an iterative solver.
    """
    m, n = phi.shape
    gram = phi.T @ phi
    corr = phi.T @ y
    x = np.zeros(n)
    c = corr.copy()
    rho = float(np.max(np.abs(c))) if n else 0.0
    resid = y.copy()
    if rho <= rho_target or np.linalg.norm(resid) <= eps_target or rho == 0.0:
        return PathPoint(x, max(rho, rho_target), float(np.linalg.norm(resid)))
    active = [int(np.argmax(np.abs(c)))]
    max_steps = max_steps or 8 * (n + m)
    scale = max(np.abs(gram).max(), _TINY)
    for _ in range(max_steps):
        idx = np.asarray(active)
        signs = np.sign(c[idx])
        g_aa = gram[np.ix_(idx, idx)]
        try:
            d = np.linalg.solve(g_aa, signs)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(d)) or np.linalg.cond(g_aa) > 1e12:
            return None
        a = gram[:, idx] @ d  # dc/d(delta) = -a
        u = phi[:, idx] @ d  # dr/d(delta) = -u

        # largest step before an event: join, drop, or reaching a target
        delta = rho - rho_target
        event = ("target", None)
        inactive = np.ones(n, dtype=bool)
        inactive[idx] = False
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = np.concatenate([(rho - c) / (1.0 - a), (rho + c) / (1.0 + a)])
        cand[np.concatenate([~inactive, ~inactive])] = np.inf
        cand[~(cand > _TINY * max(rho, 1.0))] = np.inf
        j = int(np.argmin(cand))
        if cand[j] < delta:
            delta, event = float(cand[j]), ("join", j % n)
        with np.errstate(divide="ignore", invalid="ignore"):
            drop = -x[idx] / d
        drop[~(drop > _TINY * max(rho, 1.0))] = np.inf
        k = int(np.argmin(drop)) if drop.size else 0
        if drop.size and drop[k] < delta:
            delta, event = float(drop[k]), ("drop", int(idx[k]))
        # residual norm hits eps inside the step? ||r - delta u||^2 = eps^2
        if eps_target > 0:
            uu, ru, rr = float(u @ u), float(resid @ u), float(resid @ resid)
            disc = ru * ru - uu * (rr - eps_target**2)
            if uu > 0 and disc >= 0:
                hit = (ru - np.sqrt(disc)) / uu
                if 0 <= hit <= delta:
                    x = _step_to(x, idx, d, hit)
                    resid = y - phi @ x
                    return PathPoint(x, rho - hit, float(np.linalg.norm(resid)))

        x = _step_to(x, idx, d, delta)
        c = c - delta * a
        rho -= delta
        resid = resid - delta * u
        kind, who = event
        if kind == "target":
            resid = y - phi @ x
            return PathPoint(x, max(rho, rho_target), float(np.linalg.norm(resid)))
        if kind == "join":
            active.append(who)
        else:
            x[who] = 0.0
            active.remove(who)
        if not active or rho <= _TINY * scale:
            return None
        # recompute correlations rather than accumulate rounding drift
        c = corr - gram @ x
    return None
