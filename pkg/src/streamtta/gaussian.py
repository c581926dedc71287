"""Shared-covariance Gaussian machinery: Cholesky factors, log-densities,
class posteriors and GDA prediction.

Everything that touches densities stays in log space; with d in the hundreds
raw densities underflow long before the posteriors become degenerate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, solve_triangular

from .core import AdapterState, DimensionMismatchError, NotPositiveDefiniteError

SYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class CovarianceFactor:
    """Lower Cholesky factor ``lower`` with lower @ lower.T == sigma + eps I."""

    lower: np.ndarray
    log_det: float

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


def _check_square_symmetric(sigma: np.ndarray) -> None:
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise DimensionMismatchError(f"covariance must be square, got shape {sigma.shape}")
    asym = float(np.max(np.abs(sigma - sigma.T))) if sigma.size else 0.0
    if asym > SYMMETRY_TOL:
        raise ValueError(f"covariance is not symmetric (max asymmetry {asym:.3e})")


def factorize(sigma, epsilon: float = 0.0) -> CovarianceFactor:
    sigma = np.asarray(sigma, dtype=np.float64)
    _check_square_symmetric(sigma)
    a = sigma.copy()
    a.flat[:: a.shape[0] + 1] += epsilon
    lower, info = lapack.dpotrf(a, lower=1, clean=1)
    if info != 0:
        raise NotPositiveDefiniteError(
            f"sigma + {epsilon:g} I is not positive definite"
        )
    diag = np.diag(lower)
    if not np.all(diag > 0) or not np.all(np.isfinite(diag)):
        raise NotPositiveDefiniteError("non-positive pivot in Cholesky factor")
    return CovarianceFactor(lower, 2.0 * float(np.sum(np.log(diag))))


def precision_from_factor(factor: CovarianceFactor) -> np.ndarray:
    """Explicit inverse (L L^T)^-1, exactly symmetric."""
    # dpotri fills the lower triangle and leaves the zero upper triangle alone
    inv, info = lapack.dpotri(factor.lower, lower=1)
    if info != 0:
        raise NotPositiveDefiniteError(f"dpotri failed with info={info}")
    out = inv + inv.T
    out.flat[:: out.shape[0] + 1] *= 0.5
    return out


def ridge_inverse(sigma: np.ndarray, epsilon: float) -> np.ndarray:
    """(sigma + epsilon I)^-1 without the input validation of ``factorize``."""
    a = sigma.copy()
    a.flat[:: a.shape[0] + 1] += epsilon
    lower, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=1)
    if info != 0:
        raise NotPositiveDefiniteError(f"sigma + {epsilon:g} I is not positive definite")
    return precision_from_factor(CovarianceFactor(lower, float("nan")))


def _displacement(x, mu, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if x.shape[-1] != dim or mu.shape[-1] != dim:
        raise DimensionMismatchError(
            f"vector lengths {x.shape[-1]} and {mu.shape[-1]} do not match covariance dimension {dim}"
        )
    return x - mu


def mahalanobis_sq(x, mu, factor: CovarianceFactor) -> float:
    diff = _displacement(x, mu, factor.dim)
    z = solve_triangular(factor.lower, diff, lower=True, check_finite=False)
    return float(z @ z)


def log_gaussian_density(x, mu, factor: CovarianceFactor) -> float:
    d = factor.dim
    return -0.5 * (d * math.log(2 * math.pi) + factor.log_det + mahalanobis_sq(x, mu, factor))


def mahalanobis_to_means(x, state: AdapterState) -> np.ndarray:
    """Squared Mahalanobis distance of ``x`` to every class mean, using the
    state's cached precision."""
    diff = _displacement(x, state.mu, state.dim)
    return np.einsum("kd,kd->k", diff @ state.precision, diff)


def class_log_scores(x, state: AdapterState, use_prior: bool = True) -> np.ndarray:
    """log pi_y - 0.5 * Mahalanobis^2, i.e. the class log joint up to a shared constant."""
    return scores_from_mahalanobis(mahalanobis_to_means(x, state), state.pi, use_prior)


def scores_from_mahalanobis(maha: np.ndarray, pi: np.ndarray, use_prior: bool = True) -> np.ndarray:
    scores = -0.5 * maha
    if use_prior:
        scores = scores + np.log(pi)
    return scores


def log_normalize(scores: np.ndarray) -> np.ndarray:
    m = scores.max()
    return scores - (m + math.log(np.exp(scores - m).sum()))


def normalize_scores(scores: np.ndarray) -> np.ndarray:
    e = np.exp(scores - scores.max())
    return e / e.sum()


def gda_log_posterior(x, state: AdapterState, use_prior: bool = True) -> np.ndarray:
    return log_normalize(class_log_scores(x, state, use_prior))


def gda_posterior(x, state: AdapterState, use_prior: bool = True) -> np.ndarray:
    """Class responsibilities pi_y N(x | mu_y, Sigma) / sum_j pi_j N(x | mu_j, Sigma).

    The shared normalizer and log-determinant cancel, so only the
    Mahalanobis terms and log priors enter.
    """
    return normalize_scores(class_log_scores(x, state, use_prior))


def gda_predict(x, state: AdapterState, use_prior: bool = True) -> int:
    # np.argmax returns the first maximum: ties go to the lowest class index
    return int(np.argmax(class_log_scores(x, state, use_prior)))
