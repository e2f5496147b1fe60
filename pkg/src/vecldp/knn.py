"""Brute-force k-nearest-neighbor learner over scalar, vector or soft-label targets."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .mechanisms import InvalidParameterError, check_epsilon


class TargetMode(str, enum.Enum):
    SCALAR = "scalar"  # N class indices
    VECTOR = "vector"  # N x K binary privatized vectors
    SOFT = "soft"  # N x K rows summing to 1


class SingularTransformError(ValueError):
    pass


@dataclass(frozen=True)
class KnnModel:
    features: np.ndarray
    targets: np.ndarray  # always stored as (N, K) rows
    k: int
    mode: TargetMode

    @property
    def num_classes(self) -> int:
        return self.targets.shape[1]

    def neighbors(self, x, chunk: int = 256) -> np.ndarray:
        return nearest_indices(self.features, x, self.k, chunk=chunk)

    def score(self, x) -> np.ndarray:
        return score(self, x)

    def predict(self, x):
        return predict(self, x)


def fit(features, targets, k: int, mode: TargetMode | str | None = None, num_classes: int | None = None) -> KnnModel:
    """Store training data. ``mode`` is inferred from ``targets`` when omitted.

    Scalar targets are 0-based class indices and need ``num_classes`` (the
    max label + 1 is used otherwise); they are stored one-hot so every mode
    shares the same scoring path.
    """
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[:, None]
    targets = np.asarray(targets)
    N = features.shape[0]
    if mode is None:
        if targets.ndim == 1:
            mode = TargetMode.SCALAR
        elif np.issubdtype(targets.dtype, np.integer) or targets.dtype == bool:
            mode = TargetMode.VECTOR
        else:
            mode = TargetMode.SOFT
    mode = TargetMode(mode)
    if not (isinstance(k, (int, np.integer)) and 1 <= k <= N):
        raise InvalidParameterError(f"need 1 <= k <= N, got k={k}, N={N}")
    if targets.shape[0] != N:
        raise InvalidParameterError(f"{targets.shape[0]} targets for {N} feature rows")

    if mode is TargetMode.SCALAR:
        if targets.ndim != 1:
            raise InvalidParameterError("scalar targets must be a 1-D array of class indices")
        K = int(num_classes if num_classes is not None else targets.max() + 1)
        if targets.min() < 0 or targets.max() >= K:
            raise InvalidParameterError(f"class indices must lie in [0, {K - 1}]")
        stored = np.zeros((N, K), dtype=np.uint8)
        stored[np.arange(N), targets.astype(np.int64)] = 1
    elif mode is TargetMode.VECTOR:
        if targets.ndim != 2 or not np.all((targets == 0) | (targets == 1)):
            raise InvalidParameterError("vector targets must be an N x K matrix of 0/1 entries")
        stored = targets.astype(np.uint8)
    else:
        stored = np.asarray(targets, dtype=float)
        if stored.ndim != 2 or np.any(stored < 0) or np.any(np.abs(stored.sum(axis=1) - 1.0) > 1e-9):
            raise InvalidParameterError("soft-label rows must be nonnegative and sum to 1")
    if num_classes is not None and stored.shape[1] != num_classes:
        raise InvalidParameterError(f"targets have {stored.shape[1]} classes, expected {num_classes}")
    return KnnModel(features=features, targets=stored, k=int(k), mode=mode)


def nearest_indices(train: np.ndarray, queries, k: int, chunk: int = 256) -> np.ndarray:
    """Indices of the ``k`` nearest training rows for each query, by Euclidean distance.

    Distance ties are broken by lowest training index. Returns shape
    ``(n_queries, k)``; neighbor order within a row is by index, not distance.
    """
    queries = np.asarray(queries, dtype=float)
    if queries.ndim == 1:
        queries = queries[None, :]
    if queries.shape[1] != train.shape[1]:
        raise InvalidParameterError(f"query dimension {queries.shape[1]} != training dimension {train.shape[1]}")
    out = np.empty((queries.shape[0], k), dtype=np.int64)
    for start in range(0, queries.shape[0], chunk):
        q = queries[start : start + chunk]
        d = np.zeros((q.shape[0], train.shape[0]))
        for dim in range(train.shape[1]):
            diff = q[:, dim, None] - train[None, :, dim]
            d += diff * diff
        kth = np.partition(d, k - 1, axis=1)[:, k - 1, None]
        below = d < kth
        at = d == kth
        need = k - below.sum(axis=1, keepdims=True)
        if np.array_equal(at.sum(axis=1, keepdims=True), need):
            chosen = below | at
        else:
            chosen = below | (at & (np.cumsum(at, axis=1) <= need))
        out[start : start + chunk] = np.nonzero(chosen)[1].reshape(q.shape[0], k)
    return out


def score(model: KnnModel, x, chunk: int = 256) -> np.ndarray:
    """Average target row over the k nearest neighbors; (K,) for one point, (n, K) for a batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    idx = model.neighbors(x, chunk=chunk)
    if model.mode is TargetMode.SOFT:
        s = model.targets[idx].sum(axis=1) / model.k
    else:
        # integer counts keep the average exact
        s = model.targets[idx].sum(axis=1, dtype=np.int64) / model.k
    return s[0] if single else s


def argmax_lowest(scores) -> np.ndarray | int:
    pred = np.argmax(np.asarray(scores), axis=-1)
    return int(pred) if np.ndim(pred) == 0 else pred


def predict(model: KnnModel, x):
    """Class with the largest score, lowest index on ties."""
    return argmax_lowest(score(model, x))


def debias(scores, epsilon: float) -> np.ndarray:
    """Invert the vector mechanism's affine channel on a score vector.

    Returns ``((1 + e^{eps/2}) s - 1) / (e^{eps/2} - 1)`` without clipping,
    so the map stays strictly increasing and argmax is unchanged.
    """
    try:
        epsilon = check_epsilon(epsilon)
    except InvalidParameterError as exc:
        raise SingularTransformError("debias is singular at epsilon = 0") from exc
    s = np.asarray(scores, dtype=float)
    if math.isinf(epsilon):
        return s.copy()
    a_minus_1 = math.expm1(epsilon / 2.0)
    slope = (a_minus_1 + 2.0) / a_minus_1
    return s * slope - 1.0 / a_minus_1
