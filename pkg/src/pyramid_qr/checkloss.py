"""Single-level linear quantile regression by check-loss minimisation.

Used as a frequentist baseline in the simulation bench and as an oracle in
tests.  Each level is fitted on its own, so the fitted lines may cross.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linprog


def check_loss(residuals, tau: float) -> float:
    r = np.asarray(residuals, dtype=float)
    return float(np.sum(np.where(r >= 0, tau * r, (tau - 1.0) * r)))


def _design(X, n):
    X = np.zeros((n, 0)) if X is None else np.asarray(X, dtype=float).reshape(n, -1)
    return np.column_stack([np.ones(n), X])


def _interpolate(A, y, idx):
    try:
        return np.linalg.solve(A[idx], y[idx])
    except np.linalg.LinAlgError:
        return None


def checkloss_fit(y, X, tau: float) -> np.ndarray:
    """``(beta_0, ..., beta_P)`` minimising the check loss at level ``tau``.

    Solves the primal LP ``min tau 1'u + (1 - tau) 1'v`` subject to
    ``A beta + u - v = y`` with the dual simplex, then re-solves exactly
    through the P + 1 observations the vertex interpolates, keeping that
    solution when its objective is no worse.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    n = len(y)
    A = _design(X, n)
    k = A.shape[1]
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    if n <= k:
        raise ValueError(f"need more observations than coefficients (N={n}, P+1={k})")
    c = np.concatenate([np.zeros(k), np.full(n, tau), np.full(n, 1.0 - tau)])
    A_eq = np.hstack([A, np.eye(n), -np.eye(n)])
    bounds = [(None, None)] * k + [(0, None)] * (2 * n)
    res = linprog(c, A_eq=A_eq, b_eq=y, bounds=bounds, method="highs-ds")
    if res.status != 0:
        raise RuntimeError(f"check-loss LP failed: {res.message}")
    beta = res.x[:k]
    best = check_loss(y - A @ beta, tau)
    idx = np.argsort(np.abs(y - A @ beta), kind="stable")[:k]
    polished = _interpolate(A, y, idx)
    if polished is not None:
        obj = check_loss(y - A @ polished, tau)
        if obj <= best:
            beta, best = polished, obj
    return beta


def brute_force_checkloss(y, X, tau: float) -> tuple[np.ndarray, float]:
    """Best interpolating fit over every (P + 1)-subset of observations."""
    y = np.asarray(y, dtype=float).reshape(-1)
    A = _design(X, len(y))
    k = A.shape[1]
    best_beta, best = None, np.inf
    for idx in itertools.combinations(range(len(y)), k):
        beta = _interpolate(A, y, list(idx))
        if beta is None or not np.all(np.isfinite(beta)):
            continue
        obj = check_loss(y - A @ beta, tau)
        if obj < best:
            best_beta, best = beta, obj
    if best_beta is None:
        raise ValueError("no non-singular subset of observations")
    return best_beta, best


__all__ = ["check_loss", "checkloss_fit", "brute_force_checkloss"]
