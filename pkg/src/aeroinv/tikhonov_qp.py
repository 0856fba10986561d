"""Nonnegativity-constrained Tikhonov solvers and the discrepancy search.

All solvers operate on pre-weighted inputs: the caller applies the inverse
noise scaling to both the kernel matrix and the data before calling in, and
is responsible for any back-scaling of the regularization parameter used in
statistical computations.

The generalized problem  min 0.5*||K n - r||^2 + 0.5*gamma*n'Rn  s.t. n >= 0
is solved as plain nonnegative least squares on the row-augmented system
[K; sqrt(gamma)*U] with R = U'U, which leaves the nonnegativity constraint on
the original variables and preserves the KKT certificate in n-space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    BracketFailure,
    IllConditioned,
    MaxIterations,
    TargetOutOfRange,
)

__all__ = [
    "WeightedProblem",
    "QpSolution",
    "solve_constrained_tikhonov",
    "solve_nnls",
    "weighted_residual",
    "solve_discrepancy",
]

_GAMMA_FLOOR = 1e-12
_GAMMA_CEILING = 1e12
_MAX_BISECTIONS = 200
_DISCREPANCY_RTOL = 1e-6


@dataclass(frozen=True)
class WeightedProblem:
    """Pre-weighted Tikhonov instance with SPD regularizer R and gamma >= 0."""

    K: np.ndarray
    r: np.ndarray
    R: np.ndarray
    gamma: float = 0.0

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        r = np.asarray(self.r, dtype=float)
        R = np.asarray(self.R, dtype=float)
        if K.ndim != 2 or r.shape != (K.shape[0],) or R.shape != (K.shape[1],) * 2:
            raise ValueError("inconsistent problem dimensions")
        if not np.all(np.isfinite(K)) or not np.all(np.isfinite(r)):
            raise ValueError("K and r must be finite")
        if self.gamma < 0.0:
            raise ValueError("gamma must be nonnegative")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "R", R)


@dataclass(frozen=True)
class QpSolution:
    """KKT-certified minimizer of a nonnegativity-constrained problem."""

    n: np.ndarray
    duals: np.ndarray
    residual_sq: float
    active_set: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.n.size


def _cholesky_upper(R: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.cholesky(R, lower=False)
    except scipy.linalg.LinAlgError as exc:
        raise IllConditioned("regularizer is not positive definite") from exc


def _solve_passive(G: np.ndarray, c: np.ndarray, passive: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(passive)
    sub = G[np.ix_(idx, idx)]
    try:
        s = np.linalg.solve(sub, c[idx])
    except np.linalg.LinAlgError:
        s = np.linalg.lstsq(sub, c[idx], rcond=None)[0]
    out = np.zeros(c.size)
    out[idx] = s
    return out


def _nnls_gram(G, c, max_iter, dual_tol, init_passive=None):
    """Lawson-Hanson NNLS on the Gram form: min 0.5 n'Gn - c'n s.t. n >= 0.

    Entering index is the most negative gradient component; exact ties break
    to the lowest index (Bland-style), which with the iteration cap rules out
    cycling.  Returns (n, gradient, passive mask).
    """
    N = c.size
    passive = np.zeros(N, dtype=bool)
    n = np.zeros(N)
    iters = 0

    if init_passive is not None and init_passive.any():
        passive = init_passive.copy()
        while passive.any():
            iters += 1
            if iters > max_iter:
                raise MaxIterations("warm-started active-set solve exceeded cap")
            s = _solve_passive(G, c, passive)
            neg = passive & (s <= 0.0)
            if not neg.any():
                n = s
                break
            passive &= ~neg

    banned = np.zeros(N, dtype=bool)
    while True:
        g = G @ n - c
        w = -g
        w[passive | banned] = -np.inf
        j = int(np.argmax(w))
        if w[j] == -np.inf or w[j] <= dual_tol:
            return n, g, passive
        passive[j] = True
        entered = True
        while True:
            iters += 1
            if iters > max_iter:
                raise MaxIterations(f"active-set iteration cap {max_iter} exceeded")
            s = _solve_passive(G, c, passive)
            if entered and s[j] <= 0.0:
                # degenerate entry: the new variable came back nonpositive,
                # so ban it for this pass instead of cycling on it
                passive[j] = False
                banned[j] = True
                break
            entered = False
            neg = passive & (s <= 0.0)
            if not neg.any():
                n = s
                banned[:] = False
                break
            idx = np.flatnonzero(neg)
            alphas = n[idx] / (n[idx] - s[idx])
            alpha = max(min(alphas.min(), 1.0), 0.0)
            n = n + alpha * (s - n)
            drop = np.zeros(N, dtype=bool)
            drop[idx[alphas <= alpha + 1e-12]] = True
            n[drop] = 0.0
            passive &= ~drop


def solve_constrained_tikhonov(
    problem: WeightedProblem, init_passive: np.ndarray | None = None
) -> QpSolution:
    """Global minimizer of the constrained (generalized) Tikhonov functional."""
    K, r, R, gamma = problem.K, problem.r, problem.R, problem.gamma
    N = K.shape[1]
    G = K.T @ K
    c = K.T @ r
    if gamma > 0.0:
        U = _cholesky_upper(R)
        G = G + gamma * (U.T @ U)
    scale = max(np.max(np.abs(c)), 1e-300)
    dual_tol = 1e-10 * scale
    try:
        n, g, passive = _nnls_gram(G, c, 10 * max(N, 1), dual_tol, init_passive)
    except MaxIterations:
        if init_passive is None:
            raise
        n, g, passive = _nnls_gram(G, c, 10 * max(N, 1), dual_tol, None)
    duals = np.where(passive, 0.0, np.maximum(g, 0.0))
    resid = K @ n - r
    return QpSolution(
        n=n,
        duals=duals,
        residual_sq=float(resid @ resid),
        active_set=np.flatnonzero(~passive),
    )


def solve_nnls(K, r) -> QpSolution:
    """Nonnegative least squares (the gamma = 0 subproblem)."""
    K = np.asarray(K, dtype=float)
    problem = WeightedProblem(K, r, np.eye(K.shape[1]), 0.0)
    return solve_constrained_tikhonov(problem)


def weighted_residual(K, n, r) -> float:
    """Squared Euclidean residual ||K n - r||_2^2."""
    resid = np.asarray(K) @ np.asarray(n) - np.asarray(r)
    return float(resid @ resid)


def solve_discrepancy(K, r, R, target_sq: float, gamma_max: float = 1e6):
    """Find gamma whose constrained solution has residual equal to target_sq.

    Valid targets lie strictly between the unregularized residual and
    ||r||^2; within that range the residual-parameter map is a strictly
    monotone bijection, so a log-scale bracket plus bisection converges.
    Returns ``(gamma, QpSolution)``.
    """
    K = np.asarray(K, dtype=float)
    r = np.asarray(r, dtype=float)
    R = np.asarray(R, dtype=float)
    base = solve_nnls(K, r)
    r_norm_sq = float(r @ r)
    if not base.residual_sq < target_sq < r_norm_sq:
        raise TargetOutOfRange(
            f"target {target_sq} outside attainable range "
            f"({base.residual_sq}, {r_norm_sq})"
        )

    hint = None

    def evaluate(gamma: float) -> QpSolution:
        nonlocal hint
        sol = solve_constrained_tikhonov(
            WeightedProblem(K, r, R, gamma), init_passive=hint
        )
        hint = sol.n > 0.0
        return sol

    lo = _GAMMA_FLOOR
    sol_lo = evaluate(lo)
    while sol_lo.residual_sq > target_sq and lo > 1e-30:
        lo *= 0.1
        sol_lo = evaluate(lo)

    hi = min(max(gamma_max, lo * 10.0), _GAMMA_CEILING)
    sol_hi = evaluate(hi)
    while sol_hi.residual_sq < target_sq:
        if hi >= _GAMMA_CEILING:
            raise BracketFailure(
                f"residual at gamma = {hi} still below target {target_sq}"
            )
        hi = min(hi * 10.0, _GAMMA_CEILING)
        sol_hi = evaluate(hi)

    tol = _DISCREPANCY_RTOL * target_sq
    if abs(sol_hi.residual_sq - target_sq) <= tol:
        return hi, sol_hi
    if abs(sol_lo.residual_sq - target_sq) <= tol:
        return lo, sol_lo

    log_lo, log_hi = np.log10(lo), np.log10(hi)
    best = (hi, sol_hi)
    for _ in range(_MAX_BISECTIONS):
        log_mid = 0.5 * (log_lo + log_hi)
        gamma = 10.0**log_mid
        sol = evaluate(gamma)
        if abs(sol.residual_sq - target_sq) <= tol:
            return gamma, sol
        if sol.residual_sq < target_sq:
            log_lo = log_mid
        else:
            log_hi = log_mid
            best = (gamma, sol)
    return best
