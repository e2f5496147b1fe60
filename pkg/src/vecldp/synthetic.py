"""Gaussian-on-a-circle classification task with an exact Bayes oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mechanisms import InvalidParameterError


def circle_means(num_classes: int) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    return np.column_stack([np.cos(angles), np.sin(angles)])


@dataclass(frozen=True)
class SyntheticTask:
    """K isotropic 2-D Gaussians with std ``sigma``, means equally spaced on the unit circle.

    Class ``i`` (0-based) sits at angle ``2*pi*i/K``; priors are uniform.
    """

    num_classes: int
    sigma: float
    means: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.num_classes) != self.num_classes or self.num_classes < 2:
            raise InvalidParameterError(f"num_classes must be an integer >= 2, got {self.num_classes}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise InvalidParameterError(f"sigma must be positive and finite, got {self.sigma}")
        means = circle_means(int(self.num_classes))
        means.setflags(write=False)
        object.__setattr__(self, "means", means)

    @property
    def priors(self) -> np.ndarray:
        return np.full(self.num_classes, 1.0 / self.num_classes)


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    seed: int | None = None

    def __len__(self):
        return len(self.labels)


def sample(task: SyntheticTask, n: int, rng: np.random.Generator, seed: int | None = None) -> LabeledDataset:
    """Draw ``n`` labeled points: uniform label, then Gaussian feature around its mean."""
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    labels = rng.integers(0, task.num_classes, size=n)
    features = task.means[labels] + task.sigma * rng.standard_normal((n, 2))
    return LabeledDataset(features=features, labels=labels, seed=seed)


def sample_seeded(task: SyntheticTask, n: int, seed: int) -> LabeledDataset:
    return sample(task, n, np.random.default_rng(seed), seed=seed)


def _sq_dists(task: SyntheticTask, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    dx = x[..., 0, None] - task.means[:, 0]
    dy = x[..., 1, None] - task.means[:, 1]
    return dx * dx + dy * dy


def eta(task: SyntheticTask, x) -> np.ndarray:
    """Class posteriors ``P(Y = j | X = x)`` for one point (K,) or a batch (n, K)."""
    logits = -_sq_dists(task, x) / (2.0 * task.sigma**2)
    # shift by the max before exponentiating; normalizing afterwards keeps the sum exact to a few ulps
    w = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return w / w.sum(axis=-1, keepdims=True)


def bayes_predict(task: SyntheticTask, x):
    """Nearest class mean (the argmax of ``eta``), lowest index on ties."""
    pred = np.argmin(_sq_dists(task, x), axis=-1)
    return int(pred) if np.ndim(pred) == 0 else pred


def bayes_accuracy(task: SyntheticTask, n_mc: int, rng: np.random.Generator) -> float:
    """Monte-Carlo estimate of ``P(c*(X) = Y)``; standard error is at most ``1/(2 sqrt(n_mc))``."""
    if n_mc < 1:
        raise InvalidParameterError(f"n_mc must be >= 1, got {n_mc}")
    data = sample(task, n_mc, rng)
    return float(np.mean(bayes_predict(task, data.features) == data.labels))


def eta_gaps(eta_values: np.ndarray) -> np.ndarray:
    """Largest minus second-largest posterior, per row."""
    top2 = -np.partition(-np.asarray(eta_values), 1, axis=-1)[..., :2]
    return top2[..., 0] - top2[..., 1]


def eta_gradient(task: SyntheticTask, x) -> np.ndarray:
    """Gradient of every ``eta_j`` at ``x``; shape (..., K, 2)."""
    x = np.asarray(x, dtype=float)
    e = eta(task, x)
    # grad of logit_l is (mu_l - x) / sigma^2
    grad_logit = (task.means - x[..., None, :]) / task.sigma**2
    mean_grad = np.einsum("...l,...ld->...d", e, grad_logit)
    return e[..., None] * (grad_logit - mean_grad[..., None, :])


def lipschitz_estimate(task: SyntheticTask, grid_size: int = 201, extent: float = 1.5) -> float:
    """Grid upper estimate of ``max_j sup_x |grad eta_j(x)|`` over ``[-extent, extent]^2``.

    Posteriors are a softmax of affine functions, so the gradient norm is
    bounded on the whole plane; a margin of 1% covers the grid spacing.
    """
    ticks = np.linspace(-extent, extent, grid_size)
    gx, gy = np.meshgrid(ticks, ticks)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    best = 0.0
    for chunk in np.array_split(pts, max(1, len(pts) * task.num_classes // 200_000)):
        norms = np.linalg.norm(eta_gradient(task, chunk), axis=-1)
        best = max(best, float(norms.max()))
    return 1.01 * best
