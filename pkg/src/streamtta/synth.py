"""Synthetic domain-shift streams and closed-form reference estimators.

A stream is built from K orthonormal prototypes. Each class's true mean is
its prototype pushed by a random offset of fixed length and projected back to
the unit sphere; samples are isotropic Gaussians around the true means,
normalized like any other ingested embedding.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .adapter import refactorize
from .core import AdapterState, PrototypeSet, StreamTTAError, l2_normalize


class InfeasibleSpecError(StreamTTAError, ValueError):
    pass


@dataclass(frozen=True)
class ShiftSpec:
    num_classes: int = 4
    dim: int = 16
    samples_per_stream: int = 2000
    shift_magnitude: float = 1.0
    within_class_sigma: float = 0.5
    class_prior: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise InfeasibleSpecError(f"need at least 2 classes, got {self.num_classes}")
        if self.dim < 1 or self.samples_per_stream < 0:
            raise InfeasibleSpecError("dim must be >= 1 and samples_per_stream >= 0")
        if self.num_classes > self.dim:
            raise InfeasibleSpecError(
                f"cannot place {self.num_classes} orthogonal prototypes in {self.dim} dimensions"
            )
        if self.shift_magnitude < 0:
            raise InfeasibleSpecError("shift_magnitude must be >= 0")
        if not self.within_class_sigma > 0:
            raise InfeasibleSpecError("within_class_sigma must be > 0")
        if self.class_prior is not None:
            prior = np.asarray(self.class_prior, dtype=np.float64)
            if prior.shape != (self.num_classes,) or np.any(prior < 0) or abs(prior.sum() - 1) > 1e-9:
                raise InfeasibleSpecError("class_prior must be a probability vector of length num_classes")
            object.__setattr__(self, "class_prior", tuple(float(p) for p in prior))

    @property
    def prior(self) -> np.ndarray:
        if self.class_prior is None:
            return np.full(self.num_classes, 1.0 / self.num_classes)
        return np.asarray(self.class_prior)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["class_prior"] = self.prior.tolist()
        return out


@dataclass
class SynthStream:
    prototypes: PrototypeSet
    stream: np.ndarray
    labels: np.ndarray
    true_means: np.ndarray
    spec: ShiftSpec = field(default_factory=ShiftSpec)
    raw_samples: np.ndarray | None = None  # before normalization


def generate(spec: ShiftSpec) -> SynthStream:
    rng = np.random.default_rng(spec.seed)
    k, d = spec.num_classes, spec.dim
    q, _ = np.linalg.qr(rng.normal(size=(d, k)))
    prototypes = q.T.copy()

    offsets = l2_normalize(rng.normal(size=(k, d))) * spec.shift_magnitude
    shifted = prototypes + offsets
    if np.any(np.linalg.norm(shifted, axis=1) < 1e-12):
        raise InfeasibleSpecError("an offset cancelled its prototype; pick another seed")
    true_means = l2_normalize(shifted)

    labels = rng.choice(k, size=spec.samples_per_stream, p=spec.prior)
    raw = true_means[labels] + spec.within_class_sigma * rng.normal(size=(spec.samples_per_stream, d))
    stream = l2_normalize(raw) if spec.samples_per_stream else raw
    return SynthStream(
        prototypes=PrototypeSet.from_vectors(prototypes, normalize=False),
        stream=stream,
        labels=labels,
        true_means=true_means,
        spec=spec,
        raw_samples=raw,
    )


def inject_garbage(
    data: SynthStream, fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Interleave uniformly random unit directions into the stream.

    Returns the new stream and labels; garbage samples carry label -1. The
    number injected is ``round(fraction * len(stream))`` measured against the
    final stream length, placed at uniformly random positions.
    """
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    n_clean = len(data.stream)
    n_garbage = int(round(fraction * n_clean / (1 - fraction)))
    garbage = l2_normalize(rng.normal(size=(n_garbage, data.spec.dim)))
    total = n_clean + n_garbage
    is_garbage = np.zeros(total, dtype=bool)
    is_garbage[rng.choice(total, size=n_garbage, replace=False)] = True
    stream = np.empty((total, data.spec.dim))
    stream[is_garbage] = garbage
    stream[~is_garbage] = data.stream
    labels = np.full(total, -1)
    labels[~is_garbage] = data.labels
    return stream, labels


def mean_error(mu: np.ndarray, true_means: np.ndarray) -> float:
    """Mean over classes of the Euclidean distance between estimated and true means."""
    return float(np.mean(np.linalg.norm(mu - true_means, axis=1)))


def batch_gda_oracle(
    xs: Sequence,
    weights: Sequence[tuple[float, Sequence[float]]],
    init: AdapterState,
) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form means and priors after absorbing weighted samples.

    mu_y = (N0_y mu0_y + sum_t w_t gamma_yt x_t) / (N0_y + sum_t w_t gamma_yt)
    pi_y = (N0_y + sum_t w_t gamma_yt) / (n0 + sum_t w_t)
    """
    if len(xs) != len(weights):
        raise ValueError(f"{len(xs)} samples but {len(weights)} weight records")
    mu0, n0 = init.mu, init.n_eff
    if len(xs) == 0:
        return mu0.copy(), init.pi.copy()
    x = np.asarray(xs, dtype=np.float64)
    w = np.array([wt for wt, _ in weights], dtype=np.float64)
    gamma = np.array([g for _, g in weights], dtype=np.float64)
    wg = w[:, None] * gamma
    mass = n0 + wg.sum(axis=0)
    mu = (n0[:, None] * mu0 + wg.T @ x) / mass[:, None]
    pi = mass / (init.n_total + w.sum())
    return mu, pi


def supervised_gda_upper_bound(
    xs, labels, epsilon: float = 1e-4, num_classes: int | None = None
) -> AdapterState:
    """GDA fitted with the true labels: class means, pooled within-class
    covariance (N - K denominator) and label frequencies."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(labels)
    k = int(y.max()) + 1 if num_classes is None else num_classes
    counts = np.bincount(y, minlength=k)
    if np.any(counts < 2):
        missing = [int(c) for c in np.flatnonzero(counts < 2)]
        raise InfeasibleSpecError(f"classes {missing} have fewer than 2 labelled samples")
    mu = np.stack([x[y == c].mean(axis=0) for c in range(k)])
    centered = x - mu[y]
    sigma = centered.T @ centered / (len(x) - k)
    sigma = 0.5 * (sigma + sigma.T)
    state = AdapterState(
        mu=mu,
        sigma=sigma,
        precision=np.empty_like(sigma),
        pi=counts / counts.sum(),
        n_eff=counts.astype(np.float64),
        n_total=float(counts.sum()),
        samples_seen=len(x),
        epsilon=epsilon,
    )
    return refactorize(state)
