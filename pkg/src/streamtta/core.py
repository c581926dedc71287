"""Domain types shared by the adaptation engine.

Embeddings and prototypes are plain float64 numpy arrays. The richer records
(hyperparameters, adapter state, per-sample outcome) are dataclasses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from functools import cached_property
from enum import Enum
from typing import Sequence

import numpy as np

SIMPLEX_TOL = 1e-6


class StreamTTAError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(StreamTTAError, ValueError):
    pass


class InvalidPrototypeSetError(StreamTTAError, ValueError):
    pass


class SimplexError(StreamTTAError, ValueError):
    pass


class NotPositiveDefiniteError(StreamTTAError, np.linalg.LinAlgError):
    pass


class CovarianceRule(str, Enum):
    LITERAL = "literal"
    CONVEX = "convex"


def l2_normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("cannot normalize a zero vector")
    return v / norm


def ingest(vectors, normalize: bool = True) -> np.ndarray:
    """Convert raw vectors (one per row, or a single vector) to float64 embeddings.

    Rejects non-finite entries. With ``normalize`` each row is scaled to unit
    Euclidean norm, which makes dot products equal cosine similarities.
    """
    arr = np.array(vectors, dtype=np.float64)
    if arr.ndim not in (1, 2):
        raise ValueError(f"expected a vector or a 2-D array, got ndim={arr.ndim}")
    if arr.shape[-1] == 0:
        raise ValueError("embeddings must have at least one coordinate")
    if not np.all(np.isfinite(arr)):
        raise ValueError("embedding contains NaN or Inf")
    if normalize:
        arr = l2_normalize(arr)
    return arr


@dataclass(frozen=True)
class PrototypeSet:
    """K class prototype vectors (rows of ``vectors``) with class names."""

    vectors: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        v = self.vectors
        if v.ndim != 2:
            raise InvalidPrototypeSetError("prototypes must be a K x d array")
        if v.shape[0] < 2:
            raise InvalidPrototypeSetError(
                f"a prototype set needs at least 2 classes, got K={v.shape[0]}"
            )
        if len(self.class_names) != v.shape[0]:
            raise InvalidPrototypeSetError(
                f"{len(self.class_names)} class names for {v.shape[0]} prototypes"
            )
        if not np.all(np.isfinite(v)):
            raise InvalidPrototypeSetError("prototypes contain NaN or Inf")

    @classmethod
    def from_vectors(
        cls,
        vectors,
        class_names: Sequence[str] | None = None,
        normalize: bool = True,
    ) -> "PrototypeSet":
        arr = np.array(vectors, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidPrototypeSetError("prototypes must be a K x d array")
        if arr.shape[0] < 2:
            raise InvalidPrototypeSetError(
                f"a prototype set needs at least 2 classes, got K={arr.shape[0]}"
            )
        if not np.all(np.isfinite(arr)):
            raise InvalidPrototypeSetError("prototypes contain NaN or Inf")
        if normalize:
            arr = l2_normalize(arr)
        if class_names is None:
            class_names = [f"class{i}" for i in range(arr.shape[0])]
        return cls(arr, tuple(str(c) for c in class_names))

    @property
    def num_classes(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @cached_property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=1)


def validate_dimensions(prototypes: PrototypeSet, embedding) -> None:
    if not isinstance(prototypes, PrototypeSet):
        raise InvalidPrototypeSetError("expected a PrototypeSet")
    n = np.shape(embedding)[-1]
    if n != prototypes.dim:
        raise DimensionMismatchError(
            f"embedding has length {n} but prototypes have dimension {prototypes.dim}"
        )


def check_simplex(p: np.ndarray, name: str = "probabilities", tol: float = SIMPLEX_TOL) -> None:
    if not np.all(np.isfinite(p)) or np.any(p < -tol) or np.any(p > 1 + tol):
        raise SimplexError(f"{name} has entries outside [0, 1]")
    s = float(np.sum(p))
    if abs(s - 1.0) > tol:
        raise SimplexError(f"{name} sums to {s!r}, not 1")


@dataclass(frozen=True)
class HyperParams:
    alpha: float = 0.2
    beta: float = 4.5
    epsilon: float = 1e-4
    mean_update: bool = True
    cov_update: bool = True
    alm_prior_weighting: bool = True
    use_prior_in_prediction: bool = True
    covariance_rule: CovarianceRule = CovarianceRule.CONVEX
    refactor_period: int = 256
    normalize_embeddings: bool = True

    def __post_init__(self):
        object.__setattr__(self, "covariance_rule", CovarianceRule(self.covariance_rule))
        for name in ("alpha", "beta", "epsilon"):
            val = getattr(self, name)
            if not math.isfinite(val) or val < 0:
                raise ValueError(f"{name} must be a finite nonnegative number, got {val!r}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon!r}")
        if int(self.refactor_period) != self.refactor_period or self.refactor_period < 1:
            raise ValueError(f"refactor_period must be a positive integer, got {self.refactor_period!r}")

    def with_(self, **changes) -> "HyperParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["covariance_rule"] = self.covariance_rule.value
        return out


@dataclass
class AdapterState:
    """Evolving EM parameters.

    ``precision`` caches (sigma + epsilon I)^-1. Between full refactorizations
    it is maintained by low-rank corrections; ``ridge_gap`` tracks the part of
    the ridge that the low-rank path cannot represent, so that
    ``inv(precision) == sigma + (epsilon - ridge_gap) I`` up to roundoff.
    """

    mu: np.ndarray
    sigma: np.ndarray
    precision: np.ndarray
    pi: np.ndarray
    n_eff: np.ndarray
    n_total: float
    samples_seen: int = 0
    epsilon: float = 1e-4
    ridge_gap: float = 0.0
    steps_since_refactor: int = 0

    @property
    def num_classes(self) -> int:
        return self.mu.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.shape[1]

    def copy(self) -> "AdapterState":
        return AdapterState(
            mu=self.mu.copy(),
            sigma=self.sigma.copy(),
            precision=self.precision.copy(),
            pi=self.pi.copy(),
            n_eff=self.n_eff.copy(),
            n_total=self.n_total,
            samples_seen=self.samples_seen,
            epsilon=self.epsilon,
            ridge_gap=self.ridge_gap,
            steps_since_refactor=self.steps_since_refactor,
        )

    def to_dict(self) -> dict:
        return {
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "precision": self.precision.tolist(),
            "pi": self.pi.tolist(),
            "n_eff": self.n_eff.tolist(),
            "n_total": float(self.n_total),
            "samples_seen": int(self.samples_seen),
            "epsilon": float(self.epsilon),
            "ridge_gap": float(self.ridge_gap),
            "steps_since_refactor": int(self.steps_since_refactor),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdapterState":
        arr = lambda key: np.array(d[key], dtype=np.float64)  # noqa: E731
        return cls(
            mu=arr("mu"),
            sigma=arr("sigma"),
            precision=arr("precision"),
            pi=arr("pi"),
            n_eff=arr("n_eff"),
            n_total=float(d["n_total"]),
            samples_seen=int(d["samples_seen"]),
            epsilon=float(d["epsilon"]),
            ridge_gap=float(d.get("ridge_gap", 0.0)),
            steps_since_refactor=int(d.get("steps_since_refactor", 0)),
        )

    def check_invariants(self, tol: float = 1e-9) -> None:
        """Raise AssertionError if any state invariant is violated."""
        assert abs(self.pi.sum() - 1.0) <= tol, f"sum(pi) = {self.pi.sum()!r}"
        assert np.all(self.pi > 0), "non-positive prior"
        assert abs(self.n_eff.sum() - self.n_total) <= tol, (
            f"sum(n_eff) = {self.n_eff.sum()!r} != n_total = {self.n_total!r}"
        )
        asym = np.max(np.abs(self.sigma - self.sigma.T))
        assert asym < tol, f"sigma asymmetry {asym!r}"
        try:
            np.linalg.cholesky(self.sigma + self.epsilon * np.eye(self.dim))
        except np.linalg.LinAlgError:
            raise AssertionError("sigma + epsilon I is not positive definite") from None


@dataclass
class PredictionOutcome:
    zero_shot_probs: np.ndarray
    entropy: float
    weight: float
    responsibilities: np.ndarray
    fused_logits: np.ndarray
    gda_log_posterior: np.ndarray
    predicted_class: int

    @property
    def zero_shot_class(self) -> int:
        return int(np.argmax(self.zero_shot_probs))

    @property
    def gda_class(self) -> int:
        return int(np.argmax(self.gda_log_posterior))

    def to_dict(self) -> dict:
        return {
            "zero_shot_probs": self.zero_shot_probs.tolist(),
            "entropy": float(self.entropy),
            "weight": float(self.weight),
            "responsibilities": self.responsibilities.tolist(),
            "fused_logits": self.fused_logits.tolist(),
            "gda_log_posterior": self.gda_log_posterior.tolist(),
            "predicted_class": int(self.predicted_class),
        }


@dataclass
class StepTrace:
    sample_index: int
    outcome: PredictionOutcome
    mu_drift: np.ndarray
    n_total_after: float

    def to_dict(self) -> dict:
        return {
            "sample_index": self.sample_index,
            **self.outcome.to_dict(),
            "mu_drift": self.mu_drift.tolist(),
            "n_total_after": float(self.n_total_after),
        }


__all__ = [
    "AdapterState",
    "CovarianceRule",
    "DimensionMismatchError",
    "HyperParams",
    "InvalidPrototypeSetError",
    "NotPositiveDefiniteError",
    "PredictionOutcome",
    "PrototypeSet",
    "SimplexError",
    "StepTrace",
    "StreamTTAError",
    "check_simplex",
    "ingest",
    "l2_normalize",
    "validate_dimensions",
]
