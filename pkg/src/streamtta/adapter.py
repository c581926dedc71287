"""Streaming EM adaptation of class-conditional Gaussian statistics.

Each incoming embedding is scored against the current state (zero-shot
probabilities, entropy, GDA responsibilities, fused logits) and only then
folded into the state, so a prediction never depends on its own sample.

The precision cache (sigma + eps I)^-1 is kept current with a block
Sherman-Morrison-Woodbury update per step and refactorized from scratch every
``refactor_period`` steps. Under the convex covariance rule the whole matrix
is rescaled each step, which shrinks the ridge inside the cache; the missing
amount is tracked in ``state.ridge_gap`` and triggers an early refactorization
once its effect on the cache could exceed ``DRIFT_BUDGET``.
"""
from __future__ import annotations

import math
from typing import Iterable

import numpy as np
from scipy.linalg import solve_triangular

from .core import (
    AdapterState,
    CovarianceRule,
    HyperParams,
    PredictionOutcome,
    PrototypeSet,
    SimplexError,
    StepTrace,
    validate_dimensions,
)
from .gaussian import log_normalize, normalize_scores, ridge_inverse
from .zeroshot import entropy_nats, softmax_probs

DRIFT_BUDGET = 1e-6


def init(prototypes: PrototypeSet, hyper: HyperParams | None = None) -> AdapterState:
    hyper = hyper or HyperParams()
    if not isinstance(prototypes, PrototypeSet):
        raise TypeError("init expects a PrototypeSet")
    k, d = prototypes.vectors.shape
    sigma = np.eye(d)
    state = AdapterState(
        mu=prototypes.vectors.copy(),
        sigma=sigma,
        precision=np.empty((d, d)),
        pi=np.full(k, 1.0 / k),
        n_eff=np.full(k, 1.0 / k),
        n_total=1.0,
        samples_seen=0,
        epsilon=hyper.epsilon,
    )
    refactorize(state)
    return state


def refactorize(state: AdapterState) -> AdapterState:
    """Rebuild the precision cache from sigma in place and return the state."""
    state.precision = ridge_inverse(state.sigma, state.epsilon)
    state.ridge_gap = 0.0
    state.steps_since_refactor = 0
    return state


def precision_residual(state: AdapterState) -> float:
    """max |precision @ (sigma + eps I) - I|."""
    a = state.sigma + state.epsilon * np.eye(state.dim)
    return float(np.max(np.abs(state.precision @ a - np.eye(state.dim))))


def confidence_weight(h: float, beta: float) -> float:
    if h < 0:
        raise ValueError(f"entropy must be nonnegative, got {h!r}")
    return math.exp(-beta * h)


def _woodbury_downdate(p: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Return the correction C with (P^-1 + V^T V)^-1 = P - C.

    C = Z^T Z with Z = L^-1 V P and L L^T = I + V P V^T, which keeps the
    correction symmetric positive semidefinite.
    """
    vp = v @ p
    inner = np.eye(v.shape[0]) + vp @ v.T
    lower = np.linalg.cholesky(inner)
    z = solve_triangular(lower, vp, lower=True, check_finite=False)
    return _gram(z)


def _gram(v: np.ndarray) -> np.ndarray:
    # a contiguous copy of v.T routes through gemm, which is several times
    # faster than the syrk kernel for the short-and-wide shapes seen here
    return np.ascontiguousarray(v.T) @ v


def _drift_bound(p_old: np.ndarray, scale: float, gap: float) -> float:
    """Estimate of the cache error after this step if it is not refactorized.

    With B the matrix the cache inverts and A = B + gap I the target, the
    residual P A - I equals gap P, and the inverse error P - A^-1 equals
    gap P A^-1, roughly gap * max_i |P_i|^2. The PSD update can only lower
    the diagonal of P, so P_old / scale bounds the first term; the row-norm
    term is a first-order estimate.
    """
    p_diag = float(np.max(np.diag(p_old))) / scale
    p_row = float(np.max(np.einsum("ij,ij->i", p_old, p_old))) / (scale * scale)
    return gap * max(p_diag, p_row)


def _check_step_inputs(state: AdapterState, x: np.ndarray, gamma: np.ndarray, w: float) -> None:
    if not (math.isfinite(w) and 0.0 <= w <= 1.0):
        raise ValueError(f"confidence weight must lie in [0, 1], got {w!r}")
    if gamma.shape != (state.num_classes,):
        raise SimplexError(f"responsibilities have shape {gamma.shape}, expected ({state.num_classes},)")
    if np.any(gamma < -1e-12) or abs(gamma.sum() - 1.0) > 1e-9:
        raise SimplexError("responsibilities are not on the probability simplex")
    if x.shape != (state.dim,):
        raise ValueError(f"sample has shape {x.shape}, expected ({state.dim},)")


def m_step(
    state: AdapterState,
    x,
    gamma,
    w: float,
    hyper: HyperParams | None = None,
) -> AdapterState:
    """Fold one weighted sample into the statistics and return a new state.

    Counts: N_y += w * gamma_y and n += w, priors are N_y / n. Means move
    towards ``x`` at rate w * gamma_y / N_y'. The covariance picks up the
    responsibility-weighted scatter around the updated means, either added
    on top of sigma (literal rule) or blended with it in proportion to the
    counts (convex rule). ``w == 0`` only advances ``samples_seen``.
    The input state is not modified.
    """
    hyper = hyper or HyperParams()
    x = np.asarray(x, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    _check_step_inputs(state, x, gamma, w)
    return _m_step(state, x, gamma, w, hyper)


def _m_step(state: AdapterState, x: np.ndarray, gamma: np.ndarray, w: float, hyper: HyperParams) -> AdapterState:
    new = AdapterState(
        mu=state.mu,
        sigma=state.sigma,
        precision=state.precision,
        pi=state.pi.copy(),
        n_eff=state.n_eff.copy(),
        n_total=state.n_total,
        samples_seen=state.samples_seen + 1,
        epsilon=state.epsilon,
        ridge_gap=state.ridge_gap,
        steps_since_refactor=state.steps_since_refactor,
    )
    if w == 0.0:
        new.mu = state.mu.copy()
        new.sigma = state.sigma.copy()
        new.precision = state.precision.copy()
        return new

    wg = w * gamma
    n_old = state.n_total
    n_new = n_old + w
    new.n_eff = state.n_eff + wg
    new.n_total = n_new
    new.pi = new.n_eff / n_new

    if hyper.mean_update:
        rate = wg / new.n_eff
        new.mu = state.mu + rate[:, None] * (x - state.mu)
    else:
        new.mu = state.mu.copy()

    if not hyper.cov_update:
        new.sigma = state.sigma.copy()
        new.precision = state.precision.copy()
        return new

    if hyper.covariance_rule is CovarianceRule.LITERAL:
        scale = 1.0
        coef = wg / max(n_new - 1.0, 1.0)
    else:
        scale = n_old / n_new
        coef = wg / n_new
    keep = coef > 0
    v = np.sqrt(coef[keep])[:, None] * (x - new.mu[keep])
    sigma = state.sigma * scale
    sigma += _gram(v)
    new.sigma = sigma

    new.ridge_gap = scale * state.ridge_gap + (1.0 - scale) * state.epsilon
    new.steps_since_refactor = state.steps_since_refactor + 1
    due = new.steps_since_refactor >= hyper.refactor_period
    if due or (new.ridge_gap > 0 and _drift_bound(state.precision, scale, new.ridge_gap) > DRIFT_BUDGET):
        refactorize(new)
    else:
        p = state.precision * (1.0 / scale)
        if v.size:
            p -= _woodbury_downdate(p, v)
        new.precision = p
    return new


def fuse_logits(
    x,
    prototypes: PrototypeSet,
    state: AdapterState,
    alpha: float,
    use_prior: bool = True,
) -> np.ndarray:
    """Zero-shot dot-product logits plus alpha times the linear GDA score."""
    validate_dimensions(prototypes, x)
    x = np.asarray(x, dtype=np.float64)
    zs = prototypes.vectors @ x
    if alpha == 0:
        return zs
    return zs + alpha * generative_scores(x, state, use_prior)


def generative_scores(x, state: AdapterState, use_prior: bool = True) -> np.ndarray:
    """w_y . x + b_y with w_y = P mu_y and b_y = log pi_y - mu_y . P mu_y / 2."""
    w = state.mu @ state.precision
    b = -0.5 * np.einsum("kd,kd->k", w, state.mu)
    if use_prior:
        b = b + np.log(state.pi)
    return w @ np.asarray(x, dtype=np.float64) + b


def process_sample(
    state: AdapterState,
    x,
    prototypes: PrototypeSet,
    hyper: HyperParams | None = None,
    sample_index: int | None = None,
) -> tuple[PredictionOutcome, AdapterState, StepTrace]:
    hyper = hyper or HyperParams()
    validate_dimensions(prototypes, x)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"process_sample takes a single embedding, got shape {x.shape}")

    protos = prototypes.vectors
    dots = protos @ x
    cos = np.clip(dots / (math.sqrt(x @ x) * prototypes.norms), -1.0, 1.0)
    probs = softmax_probs(cos)
    h = entropy_nats(probs)
    w = math.exp(-hyper.beta * h) if hyper.alm_prior_weighting else 1.0

    # mu P serves both the Mahalanobis terms and the linear generative scores
    mu = state.mu
    mu_p = mu @ state.precision
    diff = x - mu
    maha = np.einsum("kd,kd->k", x @ state.precision - mu_p, diff)
    log_pi = np.log(state.pi)
    # E-step always uses the priors; prediction may drop them
    gamma = normalize_scores(log_pi - 0.5 * maha)
    pred_scores = log_pi - 0.5 * maha if hyper.use_prior_in_prediction else -0.5 * maha
    log_post = log_normalize(pred_scores)

    fused = dots
    if hyper.alpha != 0:
        gen = mu_p @ x - 0.5 * np.einsum("kd,kd->k", mu_p, mu)
        if hyper.use_prior_in_prediction:
            gen += log_pi
        fused = dots + hyper.alpha * gen
    outcome = PredictionOutcome(
        zero_shot_probs=probs,
        entropy=h,
        weight=w,
        responsibilities=gamma,
        fused_logits=fused,
        gda_log_posterior=log_post,
        predicted_class=int(np.argmax(fused)),
    )

    new_state = _m_step(state, x, gamma, w, hyper)
    trace = StepTrace(
        sample_index=state.samples_seen if sample_index is None else sample_index,
        outcome=outcome,
        mu_drift=np.linalg.norm(new_state.mu - state.mu, axis=1),
        n_total_after=new_state.n_total,
    )
    return outcome, new_state, trace


def run_stream(
    state: AdapterState,
    stream: Iterable,
    prototypes: PrototypeSet,
    hyper: HyperParams | None = None,
) -> tuple[list[PredictionOutcome], AdapterState, list[StepTrace]]:
    hyper = hyper or HyperParams()
    outcomes: list[PredictionOutcome] = []
    traces: list[StepTrace] = []
    for x in stream:
        outcome, state, trace = process_sample(state, x, prototypes, hyper)
        outcomes.append(outcome)
        traces.append(trace)
    if not outcomes:
        raise ValueError("run_stream needs a non-empty stream")
    return outcomes, state, traces
