"""Model generation over discretization levels and Bayesian model ranking.

Candidates are produced by walking collocation levels from coarse to fine.
On each level the unregularized nonnegative fit decides, together with the
data norm, which residual targets from the safety-factor grid are attainable;
each attainable target yields one regularized reconstruction through the
discrepancy principle.  Candidates from at most ``max_disc`` levels are then
ranked by their marginal likelihood.

Comparison methods: the single-factor "morozov" variant, the unconstrained
variant with closed-form Gaussian evidence, and ranking by the Bayesian
information criterion.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .discretization import KernelMatrix
from .errors import (
    BracketFailure,
    EmptyCandidates,
    IllConditioned,
    NoModels,
    TargetOutOfRange,
)
from .orthant_mvn import DEFAULT_SAMPLES, QuadraticForm, orthant_integral
from .tikhonov_qp import solve_discrepancy, solve_nnls

__all__ = [
    "Regularizer",
    "Measurement",
    "NoiseScaling",
    "ModelCandidate",
    "REGULARIZER_KINDS",
    "DEFAULT_TAU_GRID",
    "MOROZOV_TAU",
    "DEFAULT_LADDER",
    "build_regularizer",
    "generate_models",
    "log_marginal_likelihood",
    "select_models",
    "invert_constrained",
    "invert_morozov",
    "invert_unconstrained",
    "bic_select",
]

REGULARIZER_KINDS = ("tikhonov", "first_diff", "twomey")
DEFAULT_TAU_GRID = tuple(np.round(np.arange(0.6, 1.71, 0.1), 10))
MOROZOV_TAU = 1.1
DEFAULT_LADDER = tuple(range(3, 51))
DEFAULT_MAX_DISC = 3
LOW_NOISE_DELTA_SQ = 1e-10


@dataclass(frozen=True)
class Regularizer:
    """SPD regularization matrix with its upper Cholesky factor."""

    kind: str
    matrix: np.ndarray
    cholesky: np.ndarray


def build_regularizer(kind: str, N: int) -> Regularizer:
    """Construct the regularizer stencil of the given kind and dimension."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if kind == "tikhonov":
        R = np.eye(N)
    elif kind == "first_diff":
        # forward differences of the zero-padded weight vector
        H = np.zeros((N + 1, N))
        H[np.arange(N), np.arange(N)] = -1.0
        H[np.arange(1, N + 1), np.arange(N)] += 1.0
        R = H.T @ H
    elif kind == "twomey":
        H = 2.0 * np.eye(N)
        H[np.arange(N - 1), np.arange(1, N)] = -1.0
        H[np.arange(1, N), np.arange(N - 1)] = -1.0
        R = H.T @ H
    else:
        raise ValueError(f"unknown regularizer kind {kind!r}")
    try:
        U = scipy.linalg.cholesky(R, lower=False)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover
        raise IllConditioned(f"{kind} regularizer is not SPD") from exc
    return Regularizer(kind, R, U)


@dataclass(frozen=True)
class Measurement:
    """Per-wavelength sample means and variances of repeated extinctions."""

    wavelengths: np.ndarray
    mean_extinction: np.ndarray
    variance: np.ndarray
    repeats: int = 1

    def __post_init__(self):
        w = np.asarray(self.wavelengths, dtype=float)
        m = np.asarray(self.mean_extinction, dtype=float)
        v = np.asarray(self.variance, dtype=float)
        if not (w.shape == m.shape == v.shape) or w.ndim != 1:
            raise ValueError("wavelengths, means, variances must be 1-D, equal length")
        if np.any(v <= 0.0):
            raise ValueError("variances must be positive")
        for arr in (w, m, v):
            arr.setflags(write=False)
        object.__setattr__(self, "wavelengths", w)
        object.__setattr__(self, "mean_extinction", m)
        object.__setattr__(self, "variance", v)

    @property
    def n_wavelengths(self) -> int:
        return self.wavelengths.size


@dataclass(frozen=True)
class NoiseScaling:
    """Observation covariance split into a level delta^2 and a normalized shape.

    The observed extinction vector is the sample mean of the repeated draws,
    so its per-wavelength variance is the sample variance divided by the
    repeat count; delta^2 is the largest of these.
    """

    delta_sq: float
    sigma_normalized: np.ndarray
    obs_variance: np.ndarray

    @classmethod
    def from_measurement(cls, meas: Measurement) -> "NoiseScaling":
        obs_variance = meas.variance / max(meas.repeats, 1)
        delta_sq = float(obs_variance.max())
        return cls(delta_sq, obs_variance / delta_sq, obs_variance)

    @property
    def normalized_weights(self) -> np.ndarray:
        """Row weights applying the inverse square root of the normalized
        covariance."""
        return 1.0 / np.sqrt(self.sigma_normalized)


@dataclass(frozen=True)
class ModelCandidate:
    """One regularized reconstruction plus everything needed to score it."""

    weights: np.ndarray
    kernel: KernelMatrix
    regularizer: Regularizer
    gamma: float
    tau: float | None
    residual_sq: float
    log_marginal: float | None = None
    posterior: float | None = None
    fraction: float | None = None

    @property
    def dim(self) -> int:
        return self.kernel.interior_dim


def _weighted_system(kernel: KernelMatrix, meas: Measurement, scaling: NoiseScaling):
    w = scaling.normalized_weights
    return kernel.entries * w[:, None], meas.mean_extinction * w


def _level_candidates(
    kernel, meas, scaling, tau_grid, reg, data_norm_sq, gamma_max
):
    """Candidates for one discretization level (empty if none admissible)."""
    K, r = _weighted_system(kernel, meas, scaling)
    base = solve_nnls(K, r)
    n_l = meas.n_wavelengths
    out = []
    for tau in tau_grid:
        target = tau * n_l * scaling.delta_sq
        if not (base.residual_sq < target and target < data_norm_sq):
            continue
        try:
            gamma, sol = solve_discrepancy(
                K, r, reg.matrix, target, gamma_max=gamma_max
            )
        except (TargetOutOfRange, BracketFailure):
            continue
        out.append(
            ModelCandidate(
                weights=sol.n,
                kernel=kernel,
                regularizer=reg,
                gamma=gamma,
                tau=float(tau),
                residual_sq=sol.residual_sq,
                fraction=kernel.fraction_label,
            )
        )
    return out


def generate_models(
    meas: Measurement,
    kernel_builder,
    ladder=DEFAULT_LADDER,
    tau_grid=DEFAULT_TAU_GRID,
    reg_kind: str = "tikhonov",
    max_disc: int = DEFAULT_MAX_DISC,
    gamma_max: float = 1e6,
) -> list[ModelCandidate]:
    """Walk the discretization ladder coarse-to-fine collecting candidates.

    ``kernel_builder(n_col)`` must return the KernelMatrix for a collocation
    size; levels whose model dimension exceeds the number of wavelengths are
    not visited.  Stops after ``max_disc`` levels produced candidates; raises
    NoModels if none did.
    """
    scaling = NoiseScaling.from_measurement(meas)
    w = scaling.normalized_weights
    data_norm_sq = float(np.sum((meas.mean_extinction * w) ** 2))
    candidates: list[ModelCandidate] = []
    filled_levels = 0
    for n_col in ladder:
        if n_col - 2 > meas.n_wavelengths:
            break
        kernel = kernel_builder(n_col)
        reg = build_regularizer(reg_kind, kernel.interior_dim)
        level = _level_candidates(
            kernel, meas, scaling, tau_grid, reg, data_norm_sq, gamma_max
        )
        if level:
            candidates.extend(level)
            filled_levels += 1
            if filled_levels >= max_disc:
                break
    if not candidates:
        raise NoModels("no admissible (level, tau) combination fits the data")
    return candidates


def log_marginal_likelihood(
    candidate: ModelCandidate,
    meas: Measurement,
    scaling: NoiseScaling,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> float:
    """Log evidence of one candidate under its truncated-Gaussian prior.

    Statistics run on the unnormalized covariance, so the regularizer stored
    with the normalized-problem parameter is rescaled by 1/delta^2 here.
    """
    var = scaling.obs_variance
    K_stat = candidate.kernel.entries / np.sqrt(var)[:, None]
    e_stat = meas.mean_extinction / np.sqrt(var)
    R_stat = (candidate.gamma / scaling.delta_sq) * candidate.regularizer.matrix
    H = K_stat.T @ K_stat + R_stat
    v = K_stat.T @ e_stat
    q = float(e_stat @ e_stat)
    log_prior_norm = orthant_integral(
        QuadraticForm(R_stat, np.zeros(candidate.dim)), samples, seed
    ).log_value
    log_joint = orthant_integral(QuadraticForm(H, v, q), samples, seed).log_value
    log_b = 0.5 * meas.n_wavelengths * np.log(2.0 * np.pi) + 0.5 * float(
        np.sum(np.log(var))
    )
    return float(log_joint - log_b - log_prior_norm)


def _rank(candidates, log_marginals):
    log_marginals = np.asarray(log_marginals, dtype=float)
    shifted = log_marginals - log_marginals.max()
    post = np.exp(shifted)
    post /= post.sum()
    enriched = [
        dataclasses.replace(c, log_marginal=float(lm), posterior=float(p))
        for c, lm, p in zip(candidates, log_marginals, post)
    ]
    enriched.sort(
        key=lambda c: (-c.posterior, c.dim, c.tau if c.tau is not None else 0.0)
    )
    return enriched


def select_models(
    candidates,
    meas: Measurement,
    scaling: NoiseScaling | None = None,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> list[ModelCandidate]:
    """Rank candidates by posterior probability under a uniform model prior."""
    if not candidates:
        raise EmptyCandidates("no candidates to select from")
    if scaling is None:
        scaling = NoiseScaling.from_measurement(meas)
    log_marginals = [
        log_marginal_likelihood(c, meas, scaling, samples, seed) for c in candidates
    ]
    return _rank(candidates, log_marginals)


def invert_constrained(
    meas: Measurement,
    kernel_builder,
    ladder=DEFAULT_LADDER,
    tau_grid=DEFAULT_TAU_GRID,
    reg_kind: str = "tikhonov",
    max_disc: int = DEFAULT_MAX_DISC,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> list[ModelCandidate]:
    """Full constrained pipeline: generate candidates, rank them.

    For nearly noise-free data the statistical computations degenerate, so the
    Bayesian ranking is skipped in favor of the coarsest admissible model at
    the classical safety factor.
    """
    scaling = NoiseScaling.from_measurement(meas)
    if scaling.delta_sq < LOW_NOISE_DELTA_SQ:
        return invert_morozov(meas, kernel_builder, ladder, reg_kind)
    candidates = generate_models(
        meas, kernel_builder, ladder, tau_grid, reg_kind, max_disc
    )
    return select_models(candidates, meas, scaling, samples, seed)


def invert_morozov(
    meas: Measurement,
    kernel_builder,
    ladder=DEFAULT_LADDER,
    reg_kind: str = "tikhonov",
) -> list[ModelCandidate]:
    """Single-factor variant: tau = 1.1, coarsest admissible level only."""
    candidates = generate_models(
        meas, kernel_builder, ladder, (MOROZOV_TAU,), reg_kind, max_disc=1
    )
    return [dataclasses.replace(candidates[0], posterior=1.0)]


def _ridge_solve(K, r, R, gamma):
    G = K.T @ K + gamma * R
    c = K.T @ r
    try:
        return np.linalg.solve(G, c)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(G, c, rcond=None)[0]


def _ridge_discrepancy(K, r, R, target_sq, gamma_max=1e6):
    """Discrepancy search for the unconstrained ridge path."""

    def residual(gamma):
        n = _ridge_solve(K, r, R, gamma)
        d = K @ n - r
        return float(d @ d), n

    lo = 1e-12
    res_lo, _ = residual(lo)
    while res_lo > target_sq and lo > 1e-30:
        lo *= 0.1
        res_lo, _ = residual(lo)
    hi = gamma_max
    res_hi, _ = residual(hi)
    while res_hi < target_sq:
        if hi >= 1e12:
            raise BracketFailure("ridge residual below target at gamma ceiling")
        hi *= 10.0
        res_hi, _ = residual(hi)
    log_lo, log_hi = np.log10(lo), np.log10(hi)
    for _ in range(200):
        gamma = 10.0 ** (0.5 * (log_lo + log_hi))
        res, n = residual(gamma)
        if abs(res - target_sq) <= 1e-6 * target_sq:
            return gamma, n, res
        if res < target_sq:
            log_lo = 0.5 * (log_lo + log_hi)
        else:
            log_hi = 0.5 * (log_lo + log_hi)
    return gamma, n, res


def _log_evidence_unconstrained(candidate, meas, scaling):
    """Closed-form Gaussian evidence (no orthant restriction)."""
    var = scaling.obs_variance
    K_stat = candidate.kernel.entries / np.sqrt(var)[:, None]
    e_stat = meas.mean_extinction / np.sqrt(var)
    R_stat = (candidate.gamma / scaling.delta_sq) * candidate.regularizer.matrix
    H = K_stat.T @ K_stat + R_stat
    v = K_stat.T @ e_stat
    q = float(e_stat @ e_stat)
    cf = scipy.linalg.cho_factor(H, lower=False)
    logdet_h = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    sign, logdet_r = np.linalg.slogdet(R_stat)
    if sign <= 0:
        raise IllConditioned("prior covariance is degenerate")
    mode = scipy.linalg.cho_solve(cf, v)
    log_b = 0.5 * meas.n_wavelengths * np.log(2.0 * np.pi) + 0.5 * float(
        np.sum(np.log(var))
    )
    return -0.5 * (q - float(v @ mode)) - 0.5 * logdet_h + 0.5 * logdet_r - log_b


def invert_unconstrained(
    meas: Measurement,
    kernel_builder,
    ladder=DEFAULT_LADDER,
    tau_grid=DEFAULT_TAU_GRID,
    reg_kind: str = "tikhonov",
    max_disc: int = DEFAULT_MAX_DISC,
) -> list[ModelCandidate]:
    """Same pipeline with the constraints dropped and analytic evidence."""
    scaling = NoiseScaling.from_measurement(meas)
    w = scaling.normalized_weights
    data_norm_sq = float(np.sum((meas.mean_extinction * w) ** 2))
    n_l = meas.n_wavelengths
    candidates = []
    filled_levels = 0
    for n_col in ladder:
        if n_col - 2 > n_l:
            break
        kernel = kernel_builder(n_col)
        reg = build_regularizer(reg_kind, kernel.interior_dim)
        K, r = _weighted_system(kernel, meas, scaling)
        ls = np.linalg.lstsq(K, r, rcond=None)[0]
        d = K @ ls - r
        base_res = float(d @ d)
        level = []
        for tau in tau_grid:
            target = tau * n_l * scaling.delta_sq
            if not (base_res < target < data_norm_sq):
                continue
            try:
                gamma, n, res = _ridge_discrepancy(K, r, reg.matrix, target)
            except BracketFailure:
                continue
            level.append(
                ModelCandidate(
                    weights=n,
                    kernel=kernel,
                    regularizer=reg,
                    gamma=gamma,
                    tau=float(tau),
                    residual_sq=res,
                    fraction=kernel.fraction_label,
                )
            )
        if level:
            candidates.extend(level)
            filled_levels += 1
            if filled_levels >= max_disc:
                break
    if not candidates:
        raise NoModels("no admissible (level, tau) combination fits the data")
    log_marginals = [
        _log_evidence_unconstrained(c, meas, scaling) for c in candidates
    ]
    return _rank(candidates, log_marginals)


def bic_select(
    meas: Measurement,
    kernel_builder,
    ladder=DEFAULT_LADDER,
    tau_grid=DEFAULT_TAU_GRID,
    max_levels: int = 3,
):
    """Score the coarsest admissible levels by the information criterion.

    Admissibility reuses the constrained residual window of the model
    generation step; the scored fit per level is the unconstrained
    maximum-likelihood solution.  Returns ``(candidate, score)`` with ties
    resolved toward the smaller dimension.
    """
    scaling = NoiseScaling.from_measurement(meas)
    w = scaling.normalized_weights
    var = scaling.obs_variance
    data_norm_sq = float(np.sum((meas.mean_extinction * w) ** 2))
    n_l = meas.n_wavelengths
    log_norm_const = n_l * np.log(2.0 * np.pi) + float(np.sum(np.log(var)))
    scored = []
    for n_col in ladder:
        if n_col - 2 > n_l:
            break
        kernel = kernel_builder(n_col)
        K, r = _weighted_system(kernel, meas, scaling)
        nng_res = solve_nnls(K, r).residual_sq
        admissible = any(
            nng_res < tau * n_l * scaling.delta_sq < data_norm_sq
            for tau in tau_grid
        )
        if not admissible:
            continue
        ls = np.linalg.lstsq(K, r, rcond=None)[0]
        d = K @ ls - r
        res_stat = float(d @ d) / scaling.delta_sq
        score = log_norm_const + res_stat + (n_col - 2) * np.log(n_l)
        scored.append((float(score), kernel.interior_dim, ls, kernel))
        if len(scored) >= max_levels:
            break
    if not scored:
        raise NoModels("discrepancy principle applicable on no level")
    score, _, ls, kernel = min(scored, key=lambda t: (t[0], t[1]))
    candidate = ModelCandidate(
        weights=ls,
        kernel=kernel,
        regularizer=build_regularizer("tikhonov", kernel.interior_dim),
        gamma=0.0,
        tau=None,
        residual_sq=float(np.sum((kernel.entries * w[:, None] @ ls - meas.mean_extinction * w) ** 2)),
        posterior=1.0,
    )
    return candidate, float(score)
