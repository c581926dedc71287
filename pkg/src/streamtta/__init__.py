"""Streaming test-time adaptation with entropy-weighted online EM over
class-conditional Gaussian statistics."""
from .adapter import confidence_weight, fuse_logits, init, m_step, process_sample, run_stream
from .core import (
    AdapterState,
    CovarianceRule,
    DimensionMismatchError,
    HyperParams,
    InvalidPrototypeSetError,
    PredictionOutcome,
    PrototypeSet,
    StepTrace,
    StreamTTAError,
    ingest,
    validate_dimensions,
)

__version__ = "0.1.0"
