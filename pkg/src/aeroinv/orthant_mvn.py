"""Gaussian integrals over the nonnegative orthant by quasi-Monte Carlo.

Probabilities are computed with the sequential-conditioning transform to the
unit cube, sampled with randomly shifted square-root lattice points.  All
accumulation happens in log space so that strongly shifted orthants and large
normalizing prefactors cannot under- or overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import log_ndtr, logsumexp, ndtri_exp

from .errors import CholeskyFailure

__all__ = [
    "QuadraticForm",
    "IntegralEstimate",
    "genz_orthant_probability",
    "orthant_integral",
    "DEFAULT_SAMPLES",
]

DEFAULT_SAMPLES = 50_000
_N_SHIFTS = 10


@dataclass(frozen=True)
class QuadraticForm:
    """Exponent data for integrals of exp(-0.5*(n'Hn - 2n'v + q))."""

    H: np.ndarray
    v: np.ndarray
    q: float = 0.0

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1] or v.shape != (H.shape[0],):
            raise ValueError("H must be square and v of matching length")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "v", v)

    @property
    def dim(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class IntegralEstimate:
    """Monte Carlo estimate.

    For probabilities ``std_error`` is absolute; for orthant integrals it is
    relative (approximately the standard error of ``log_value``), since the
    linear value may not be representable.
    """

    value: float
    std_error: float
    samples: int
    log_value: float


def _first_primes(count: int) -> np.ndarray:
    primes, candidate = [], 2
    while len(primes) < count:
        if all(candidate % p for p in primes):
            primes.append(candidate)
        candidate += 1
    return np.array(primes, dtype=float)


def _chol_of_inverse(H: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of H^-1 and log det H."""
    try:
        cf = scipy.linalg.cho_factor(H, lower=False)
    except scipy.linalg.LinAlgError as exc:
        raise CholeskyFailure("matrix is not positive definite") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    inv = scipy.linalg.cho_solve(cf, np.eye(H.shape[0]))
    inv = 0.5 * (inv + inv.T)
    try:
        L = np.linalg.cholesky(inv)
    except np.linalg.LinAlgError as exc:
        raise CholeskyFailure("inverse lost positive definiteness") from exc
    return L, logdet


def _log_orthant_prob_samples(L: np.ndarray, lower: np.ndarray, w: np.ndarray):
    """Per-sample log weights of P(Z >= lower), Z ~ N(0, L L')."""
    dim = L.shape[0]
    n_pts = w.shape[0]
    logf = np.zeros(n_pts)
    y = np.zeros((n_pts, max(dim - 1, 0)))
    for i in range(dim):
        shifted = lower[i] - y[:, :i] @ L[i, :i] if i else np.full(n_pts, lower[i])
        t = shifted / L[i, i]
        log_sf = log_ndtr(-t)
        logf = logf + log_sf
        if i < dim - 1:
            # conditional truncated-normal sample: y = Phi^-1(1 - (1-w)(1-d))
            log_u = np.log1p(-w[:, i]) + log_sf
            y[:, i] = -ndtri_exp(log_u)
    return logf


def genz_orthant_probability(
    H, lower_shift, samples: int = DEFAULT_SAMPLES, seed: int = 0
) -> IntegralEstimate:
    """Probability P(Z >= lower_shift) for Z ~ N(0, H^-1).

    Uses randomly shifted square-root lattice points with ``_N_SHIFTS``
    independent shifts; the spread of the per-shift estimates gives the
    standard error.
    """
    H = np.asarray(H, dtype=float)
    lower = np.atleast_1d(np.asarray(lower_shift, dtype=float))
    if samples < 1:
        raise ValueError("samples must be >= 1")
    L, _ = _chol_of_inverse(H)
    dim = L.shape[0]
    n_pts = max(samples // _N_SHIFTS, 1)
    rng = np.random.default_rng(seed)
    roots = np.sqrt(_first_primes(max(dim - 1, 1)))
    j = np.arange(1, n_pts + 1)[:, None]
    shift_logs = np.empty(_N_SHIFTS)
    for k in range(_N_SHIFTS):
        shift = rng.random(max(dim - 1, 1))
        w = np.mod(j * roots + shift, 1.0)
        logf = _log_orthant_prob_samples(L, lower, w[:, : max(dim - 1, 0)])
        shift_logs[k] = logsumexp(logf) - np.log(n_pts)

    log_value = logsumexp(shift_logs) - np.log(_N_SHIFTS)
    ref = shift_logs.max()
    if np.isfinite(ref):
        scaled = np.exp(shift_logs - ref)
        std_error = float(
            np.exp(ref) * scaled.std(ddof=1) / np.sqrt(_N_SHIFTS)
        )
        value = float(np.exp(log_value))
    else:
        std_error, value = 0.0, 0.0
    return IntegralEstimate(value, std_error, n_pts * _N_SHIFTS, float(log_value))


def orthant_integral(
    form: QuadraticForm, samples: int = DEFAULT_SAMPLES, seed: int = 0
) -> IntegralEstimate:
    """Integral of exp(-0.5*(n'Hn - 2n'v + q)) over the nonnegative orthant.

    Completing the square gives a Gaussian prefactor times the orthant
    probability of N(H^-1 v, H^-1); the result is carried as ``log_value``
    with a relative ``std_error``.
    """
    H, v, q = form.H, form.v, form.q
    dim = form.dim
    try:
        cf = scipy.linalg.cho_factor(H, lower=False)
    except scipy.linalg.LinAlgError as exc:
        raise CholeskyFailure("quadratic form is not positive definite") from exc
    mode = scipy.linalg.cho_solve(cf, v)
    logdet = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    log_prefactor = -0.5 * (q - float(v @ mode)) + 0.5 * (
        dim * np.log(2.0 * np.pi) - logdet
    )
    prob = genz_orthant_probability(H, -mode, samples=samples, seed=seed)
    rel_err = prob.std_error / prob.value if prob.value > 0.0 else 0.0
    log_value = log_prefactor + prob.log_value
    value = float(np.exp(log_value)) if np.isfinite(log_value) else 0.0
    return IntegralEstimate(value, float(rel_err), prob.samples, float(log_value))
