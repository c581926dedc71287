"""Zero-shot prototype classification and the entropy-filtered view ensemble."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import PrototypeSet, StreamTTAError, check_simplex, validate_dimensions


@dataclass(frozen=True)
class ViewEnsembleConfig:
    num_views: int = 8
    keep_fraction: float = 0.5
    view_noise_sigma: float = 0.05

    def __post_init__(self):
        if int(self.num_views) != self.num_views or self.num_views < 1:
            raise ValueError(f"num_views must be a positive integer, got {self.num_views!r}")
        if not 0 < self.keep_fraction <= 1:
            raise ValueError(f"keep_fraction must lie in (0, 1], got {self.keep_fraction!r}")
        if not self.view_noise_sigma >= 0:
            raise ValueError(f"view_noise_sigma must be >= 0, got {self.view_noise_sigma!r}")

    @property
    def num_kept(self) -> int:
        # the small slack keeps 0.5 * 8 from rounding up to 5
        return max(1, math.ceil(self.keep_fraction * self.num_views - 1e-9))


def cosine_logits(embedding, prototypes: PrototypeSet) -> np.ndarray:
    """Cosine similarity of ``embedding`` with every prototype.

    Accepts a single vector (returns shape ``(K,)``) or a batch of rows
    (returns ``(n, K)``).
    """
    validate_dimensions(prototypes, embedding)
    x = np.asarray(embedding, dtype=np.float64)
    protos = prototypes.vectors
    x_norm = np.sqrt(np.einsum("...d,...d->...", x, x))[..., None]
    p_norm = prototypes.norms
    cos = (x @ protos.T) / (x_norm * p_norm)
    return np.clip(cos, -1.0, 1.0)


def softmax_probs(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def entropy(probs) -> float:
    """Shannon entropy in nats, with 0 log 0 taken as 0."""
    p = np.asarray(probs, dtype=np.float64)
    check_simplex(p)
    return entropy_nats(np.clip(p, 0.0, 1.0))


def entropy_nats(p: np.ndarray) -> float:
    # no simplex check: for probabilities this module produced itself
    nz = p[p > 0]
    h = -float((nz * np.log(nz)).sum())
    return min(max(h, 0.0), math.log(p.size))


def view_ensemble(view_probs, config: ViewEnsembleConfig) -> np.ndarray:
    """Average the ceil(rho * M) lowest-entropy views.

    Ties in entropy are resolved by view order, so the result is deterministic.
    """
    views = np.asarray(view_probs, dtype=np.float64)
    if views.size == 0:
        raise StreamTTAError("view ensemble needs at least one view")
    if views.ndim != 2:
        raise ValueError("view_probs must be an M x K array")
    if views.shape[0] != config.num_views:
        raise ValueError(
            f"got {views.shape[0]} views but config expects {config.num_views}"
        )
    ents = np.array([entropy(v) for v in views])
    keep = np.argsort(ents, kind="stable")[: config.num_kept]
    avg = views[keep].mean(axis=0)
    return avg / avg.sum()


def view_noise(config: ViewEnsembleConfig, dim: int, seed: int) -> np.ndarray:
    """The raw (M - 1) x dim perturbations that ``make_views`` adds."""
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, config.view_noise_sigma, size=(config.num_views - 1, dim))


def make_views(embedding, config: ViewEnsembleConfig, seed: int) -> np.ndarray:
    """Synthesize M views of an embedding by isotropic Gaussian perturbation.

    Row 0 is the embedding itself. The remaining rows get N(0, sigma^2 I) noise
    and are renormalized to the input's norm (unit norm for ingested data).
    """
    x = np.asarray(embedding, dtype=np.float64)
    views = np.repeat(x[None, :], config.num_views, axis=0)
    if config.num_views == 1 or config.view_noise_sigma == 0:
        return views
    perturbed = views[1:] + view_noise(config, x.size, seed)
    scale = np.linalg.norm(x) / np.linalg.norm(perturbed, axis=1, keepdims=True)
    views[1:] = perturbed * scale
    return views


def view_ensemble_probs(embedding, prototypes: PrototypeSet, config: ViewEnsembleConfig, seed: int) -> np.ndarray:
    views = make_views(embedding, config, seed)
    probs = softmax_probs(cosine_logits(views, prototypes))
    return view_ensemble(probs, config)
