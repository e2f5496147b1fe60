"""Local label-DP mechanisms and exact privacy verification.

Class labels are 0-based integers ``0 .. K-1`` everywhere in this package.
``epsilon = math.inf`` is accepted by every mechanism and means "no
randomization".
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, logsumexp

INF = math.inf

# 2**12 outputs is the largest vector-mechanism output space we enumerate.
MAX_ENUM_CLASSES = 12


class InvalidParameterError(ValueError):
    """Raised for out-of-range labels, budgets, priors or shapes."""


class UnsupportedSizeError(ValueError):
    """Raised when an output space is too large to enumerate."""


class MechanismKind(str, enum.Enum):
    RR = "RandomizedResponse"
    RR_WITH_PRIOR = "RRWithPrior"
    ALIBI = "Alibi"
    VECTOR = "VectorApprox"


def check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if math.isnan(epsilon) or epsilon <= 0:
        raise InvalidParameterError(f"epsilon must be > 0, got {epsilon}")
    return epsilon


@dataclass(frozen=True)
class MechanismSpec:
    kind: MechanismKind
    epsilon: float
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "kind", MechanismKind(self.kind))
        object.__setattr__(self, "epsilon", check_epsilon(self.epsilon))
        if int(self.num_classes) != self.num_classes or self.num_classes < 2:
            raise InvalidParameterError(f"num_classes must be an integer >= 2, got {self.num_classes}")

    @property
    def is_private(self) -> bool:
        return math.isfinite(self.epsilon)


def _check_labels(y, num_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.size and (not np.issubdtype(y.dtype, np.integer)):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise InvalidParameterError("labels must be integers")
        y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise InvalidParameterError(f"labels must lie in [0, {num_classes - 1}]")
    return y.astype(np.int64, copy=False)


def check_prior(prior, num_classes: int | None = None, atol: float = 1e-9) -> np.ndarray:
    """Validate a prior vector (or a batch of them, one per row)."""
    prior = np.asarray(prior, dtype=float)
    if num_classes is not None and prior.shape[-1] != num_classes:
        raise InvalidParameterError(f"prior has {prior.shape[-1]} entries, expected {num_classes}")
    if np.any(prior < 0) or not np.all(np.isfinite(prior)):
        raise InvalidParameterError("prior entries must be finite and nonnegative")
    if np.any(np.abs(prior.sum(axis=-1) - 1.0) > atol):
        raise InvalidParameterError("prior must sum to 1")
    return prior


def keep_probability(epsilon: float) -> float:
    """Per-coordinate retention probability ``e^{eps/2} / (1 + e^{eps/2})``."""
    epsilon = check_epsilon(epsilon)
    if math.isinf(epsilon):
        return 1.0
    return float(expit(epsilon / 2.0))


def rr_keep_probability(epsilon: float, num_classes: int) -> float:
    """Probability that K-ary randomized response reports the true label."""
    epsilon = check_epsilon(epsilon)
    if math.isinf(epsilon):
        return 1.0
    # e^eps / (e^eps + K - 1), written to stay finite for large eps
    return float(1.0 / (1.0 + (num_classes - 1) * math.exp(-epsilon)))


# -- vector approximation ----------------------------------------------------


def vector_privatize(y, spec: MechanismSpec, rng: np.random.Generator) -> np.ndarray:
    """Privatize labels into independent-bit vectors in ``{0,1}^K``.

    ``y`` may be a scalar label (returns shape ``(K,)``) or an array of
    labels (returns shape ``(n, K)``). Entries are ``uint8``.
    """
    if spec.kind is not MechanismKind.VECTOR:
        raise InvalidParameterError(f"vector_privatize needs a VectorApprox spec, got {spec.kind.value}")
    K = spec.num_classes
    labels = _check_labels(y, K)
    scalar = labels.ndim == 0
    labels = np.atleast_1d(labels)
    p = keep_probability(spec.epsilon)
    u = rng.random((labels.size, K))
    out = u < (1.0 - p)
    rows = np.arange(labels.size)
    out[rows, labels] = u[rows, labels] < p
    out = out.astype(np.uint8)
    return out[0] if scalar else out


# -- randomized response -----------------------------------------------------


def rr_privatize(y, spec: MechanismSpec, rng: np.random.Generator):
    """K-ary randomized response; keeps y w.p. e^eps / (e^eps + K - 1)."""
    if spec.kind is not MechanismKind.RR:
        raise InvalidParameterError(f"rr_privatize needs a RandomizedResponse spec, got {spec.kind.value}")
    K = spec.num_classes
    labels = _check_labels(y, K)
    scalar = labels.ndim == 0
    labels = np.atleast_1d(labels)
    keep = rng.random(labels.size) < rr_keep_probability(spec.epsilon, K)
    # uniform over the K-1 other labels: draw in [0, K-2] and skip y
    other = rng.integers(0, K - 1, size=labels.size)
    other = other + (other >= labels)
    out = np.where(keep, labels, other)
    return int(out[0]) if scalar else out


# -- RRWithPrior (RR restricted to the prior's top-j classes) -----------------


def _top_j(prior: np.ndarray, epsilon: float):
    """Return (order, j_star) for a batch of priors, shape (n, K).

    ``order`` lists classes by decreasing prior mass with ties broken by
    lowest index; ``j_star`` (1-based count) maximizes
    ``e^eps/(e^eps + j - 1) * sum(top-j prior)``, smallest j on ties.
    """
    order = np.argsort(-prior, axis=1, kind="stable")
    mass = np.cumsum(np.take_along_axis(prior, order, axis=1), axis=1)
    j = np.arange(1, prior.shape[1] + 1)
    if math.isinf(epsilon):
        weight = mass
    else:
        weight = mass / (1.0 + (j - 1) * math.exp(-epsilon))
    j_star = np.argmax(weight, axis=1) + 1
    return order, j_star


def rrwithprior_privatize(y, prior, epsilon: float, rng: np.random.Generator):
    """Randomized response restricted to the top-j* classes of ``prior``.

    ``prior`` is either one vector shared by all labels or one row per label.
    With ``epsilon = inf`` the label is returned unchanged.
    """
    epsilon = check_epsilon(epsilon)
    prior = np.asarray(prior, dtype=float)
    K = prior.shape[-1]
    labels = _check_labels(y, K)
    scalar = labels.ndim == 0
    labels = np.atleast_1d(labels)
    prior = check_prior(np.broadcast_to(prior, (labels.size, K)))
    if math.isinf(epsilon):
        return int(labels[0]) if scalar else labels.copy()

    order, j_star = _top_j(prior, epsilon)
    n = labels.size
    # rank of the true label inside the sorted order
    rank = np.argmax(order == labels[:, None], axis=1)
    in_top = rank < j_star
    keep_p = 1.0 / (1.0 + (j_star - 1) * math.exp(-epsilon))

    u = rng.random(n)
    v = rng.random(n)
    # in top, not kept: uniform over the j*-1 other top positions
    pos_other = np.floor(v * np.maximum(j_star - 1, 1)).astype(np.int64)
    pos_other = pos_other + (pos_other >= rank)
    # not in top: uniform over all j* top positions
    pos_any = np.floor(v * j_star).astype(np.int64)

    pos = np.where(in_top, np.where(u < keep_p, rank, pos_other), pos_any)
    out = order[np.arange(n), pos]
    return int(out[0]) if scalar else out


def rrwithprior_distribution(prior, epsilon: float) -> np.ndarray:
    """Exact output distribution ``P[out = o | y]`` as a (K, K) matrix (rows = y)."""
    epsilon = check_epsilon(epsilon)
    prior = check_prior(np.asarray(prior, dtype=float)[None, :])
    K = prior.shape[1]
    if math.isinf(epsilon):
        return np.eye(K)
    order, j_star = _top_j(prior, epsilon)
    top = order[0, : j_star[0]]
    j = int(j_star[0])
    e = math.exp(epsilon)
    dist = np.zeros((K, K))
    for y in range(K):
        if y in top:
            dist[y, top] = 1.0 / (e + j - 1)
            dist[y, y] = e / (e + j - 1)
        else:
            dist[y, top] = 1.0 / j
    return dist


# -- ALIBI (Laplace noise on the one-hot label + Bayesian soft label) ----------


def alibi_privatize(y, spec: MechanismSpec, rng: np.random.Generator) -> np.ndarray:
    """One-hot label plus iid Laplace(2/eps) noise on every coordinate."""
    if spec.kind is not MechanismKind.ALIBI:
        raise InvalidParameterError(f"alibi_privatize needs an Alibi spec, got {spec.kind.value}")
    K = spec.num_classes
    labels = _check_labels(y, K)
    scalar = labels.ndim == 0
    labels = np.atleast_1d(labels)
    out = np.zeros((labels.size, K))
    out[np.arange(labels.size), labels] = 1.0
    if spec.is_private:
        out += rng.laplace(0.0, 2.0 / spec.epsilon, size=out.shape)
    return out[0] if scalar else out


def alibi_soft_label(noisy, prior=None, epsilon: float = 1.0, chunk: int = 256) -> np.ndarray:
    """Posterior over the true class given Laplace-noised one-hot vectors.

    ``probs_k ∝ prior_k * prod_j exp(-(eps/2) |noisy_j - 1[j == k]|)``.
    Each candidate class costs O(K), so one label costs O(K^2). Accepts a
    single vector or a batch of rows.
    """
    epsilon = check_epsilon(epsilon)
    noisy = np.asarray(noisy, dtype=float)
    single = noisy.ndim == 1
    noisy = np.atleast_2d(noisy)
    K = noisy.shape[1]
    if prior is None:
        prior = np.full(K, 1.0 / K)
    prior = np.asarray(prior, dtype=float)
    if prior.shape != (K,):
        raise InvalidParameterError(f"noisy vectors have {K} entries but prior has {prior.shape[-1]}")
    prior = check_prior(prior)

    eye = np.eye(K)
    with np.errstate(divide="ignore"):
        log_prior = np.log(prior)
    out = np.empty_like(noisy)
    for start in range(0, noisy.shape[0], chunk):
        block = noisy[start : start + chunk]
        # (n, K candidates, K coordinates)
        dist = np.abs(block[:, None, :] - eye[None, :, :]).sum(axis=2)
        if math.isinf(epsilon):
            # the likelihood concentrates on the nearest candidate(s)
            best = dist == dist.min(axis=1, keepdims=True)
            logits = np.where(best & (prior > 0), log_prior, -np.inf)
        else:
            logits = log_prior - 0.5 * epsilon * dist
        out[start : start + chunk] = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    return out[0] if single else out


# -- exact verification --------------------------------------------------------


def _max_log_ratio(dist: np.ndarray) -> float:
    """Max over outputs and label pairs of ln P[z|y] - ln P[z|y'].

    ``dist`` has one row per label and one column per output. Outputs that
    no label can produce are skipped.
    """
    with np.errstate(divide="ignore"):
        logp = np.log(dist)
    reachable = np.any(dist > 0, axis=0)
    logp = logp[:, reachable]
    hi = logp.max(axis=0)
    lo = logp.min(axis=0)
    if np.any(np.isinf(lo)):
        return math.inf
    return float(np.max(hi - lo))


def vector_output_log_probs(epsilon: float, num_classes: int) -> np.ndarray:
    """``ln P[Z = z | Y = y]`` for every z in ``{0,1}^K`` (rows = y)."""
    K = num_classes
    epsilon = check_epsilon(epsilon)
    if math.isinf(epsilon):
        log_p, log_q = 0.0, -math.inf
    else:
        log_p = -math.log1p(math.exp(-epsilon / 2.0))
        log_q = log_p - epsilon / 2.0
    z = np.array(list(itertools.product((0, 1), repeat=K)), dtype=bool)  # (2^K, K)
    eye = np.eye(K, dtype=bool)
    # coordinate matches its "kept" value iff z_j == 1[j == y]
    match = z[None, :, :] == eye[:, None, :]  # (K, 2^K, K)
    with np.errstate(invalid="ignore"):
        return np.where(match, log_p, log_q).sum(axis=2)


def verify_label_dp(spec: MechanismSpec, prior: Sequence[float] | None = None) -> float:
    """Largest privacy-loss ``ln P[z|y] / P[z|y']`` over all outputs and label pairs.

    Computed from exact output probabilities. For ALIBI the analytic L1
    sensitivity bound ``epsilon`` is returned instead of enumerating.
    """
    K = spec.num_classes
    eps = spec.epsilon
    if spec.kind is MechanismKind.ALIBI:
        return eps
    if spec.kind is MechanismKind.VECTOR:
        if K > MAX_ENUM_CLASSES:
            raise UnsupportedSizeError(f"2^{K} outputs is too many to enumerate (K <= {MAX_ENUM_CLASSES})")
        logp = vector_output_log_probs(eps, K)
        if math.isinf(eps):
            return _max_log_ratio(np.exp(logp))
        return float(np.max(logp.max(axis=0) - logp.min(axis=0)))
    if spec.kind is MechanismKind.RR:
        keep = rr_keep_probability(eps, K)
        other = 0.0 if math.isinf(eps) else math.exp(-eps) * keep
        dist = np.full((K, K), other)
        np.fill_diagonal(dist, keep)
        return _max_log_ratio(dist)
    if spec.kind is MechanismKind.RR_WITH_PRIOR:
        if prior is None:
            raise InvalidParameterError("RRWithPrior verification needs a fixed prior")
        check_prior(prior, K)
        return _max_log_ratio(rrwithprior_distribution(prior, eps))
    raise InvalidParameterError(f"unknown mechanism kind {spec.kind}")
