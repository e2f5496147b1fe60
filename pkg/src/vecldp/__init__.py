"""Local label differential privacy by vector approximation, with kNN learners
and a synthetic benchmark harness."""

from .mechanisms import (
    INF,
    InvalidParameterError,
    MechanismKind,
    MechanismSpec,
    UnsupportedSizeError,
    alibi_privatize,
    alibi_soft_label,
    keep_probability,
    rr_privatize,
    rrwithprior_privatize,
    vector_privatize,
    verify_label_dp,
)
from .synthetic import SyntheticTask

__version__ = "0.1.0"
