"""Excess-risk decomposition, the margin-based excess-risk bound, and the kNN error bound.

All integrals against the feature density are Monte-Carlo averages over
probe points drawn from the task.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from . import synthetic
from .knn import KnnModel, SingularTransformError, TargetMode
from .mechanisms import InvalidParameterError, check_epsilon, keep_probability
from .synthetic import SyntheticTask


@dataclass(frozen=True)
class RiskReport:
    empirical_risk: float
    bayes_risk: float
    excess_risk: float
    bound_value: float | None = None
    standard_error: float | None = None


@dataclass(frozen=True)
class DeltaProfile:
    per_point_delta: np.ndarray
    per_point_gap: np.ndarray
    epsilon: float

    def __post_init__(self):
        if len(self.per_point_delta) != len(self.per_point_gap):
            raise InvalidParameterError("delta and gap arrays differ in length")


def _check_finite_or_inf(epsilon: float) -> float:
    try:
        return check_epsilon(epsilon)
    except InvalidParameterError as exc:
        raise SingularTransformError("amplification factor diverges at epsilon = 0") from exc


def channel_slope(epsilon: float) -> float:
    """``(e^{eps/2} - 1) / (e^{eps/2} + 1)``, the slope of the vector mechanism's channel."""
    epsilon = _check_finite_or_inf(epsilon)
    if math.isinf(epsilon):
        return 1.0
    return math.tanh(epsilon / 4.0)


def privatized_eta(eta_values, epsilon: float) -> np.ndarray:
    """``P(Z(j) = 1 | X = x)`` from the clean posteriors: ``q + slope * eta``."""
    eta_values = np.asarray(eta_values, dtype=float)
    q = 1.0 - keep_probability(epsilon)
    return q + channel_slope(epsilon) * eta_values


def delta_epsilon(delta, epsilon: float):
    """Amplified approximation error ``(e^{eps/2}+1)/(e^{eps/2}-1) * delta``."""
    scaled = np.asarray(delta, dtype=float) / channel_slope(epsilon)
    return float(scaled) if scaled.ndim == 0 else scaled


def empirical_delta(model: KnnModel, task: SyntheticTask, epsilon: float, probes) -> DeltaProfile:
    """Max per-class error of the kNN scores against the exact privatized posteriors."""
    if model.mode is not TargetMode.VECTOR:
        raise InvalidParameterError(f"empirical_delta needs a vector-mode model, got {model.mode.value}")
    if model.num_classes != task.num_classes:
        raise InvalidParameterError("model and task disagree on the number of classes")
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    e = synthetic.eta(task, probes)
    g = model.score(probes)
    delta = np.max(np.abs(g - privatized_eta(e, epsilon)), axis=1)
    return DeltaProfile(per_point_delta=delta, per_point_gap=synthetic.eta_gaps(e), epsilon=float(epsilon))


def excess_risk_terms(predictions, probes, task: SyntheticTask) -> np.ndarray:
    """Per-probe ``eta*(x) - eta_{c(x)}(x)``; each term is nonnegative."""
    predictions = np.asarray(predictions, dtype=np.int64)
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if predictions.shape[0] != probes.shape[0]:
        raise InvalidParameterError(f"{predictions.shape[0]} predictions for {probes.shape[0]} probes")
    e = synthetic.eta(task, probes)
    return e.max(axis=1) - e[np.arange(len(predictions)), predictions]


def excess_risk_estimate(predictions, probes, task: SyntheticTask) -> float:
    return float(np.mean(excess_risk_terms(predictions, probes, task)))


def bound_terms(profile: DeltaProfile) -> np.ndarray:
    d_eps = delta_epsilon(np.asarray(profile.per_point_delta), profile.epsilon)
    return 2.0 * d_eps * (np.asarray(profile.per_point_gap) <= 2.0 * d_eps)


def excess_risk_bound(profile: DeltaProfile) -> float:
    """Average of ``2 Delta_eps(x) 1[gap(x) <= 2 Delta_eps(x)]`` over the probes."""
    return float(np.mean(bound_terms(profile)))


def risk_report(predictions, probes, labels, task: SyntheticTask, profile: DeltaProfile | None = None) -> RiskReport:
    """Empirical and Bayes risk on labeled probes plus the integrand estimate of their gap."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    bayes = synthetic.bayes_predict(task, probes)
    terms = excess_risk_terms(predictions, probes, task)
    return RiskReport(
        empirical_risk=float(np.mean(predictions != labels)),
        bayes_risk=float(np.mean(bayes != labels)),
        excess_risk=float(np.mean(predictions != labels) - np.mean(bayes != labels)),
        bound_value=None if profile is None else excess_risk_bound(profile),
        standard_error=float(terms.std(ddof=1) / math.sqrt(len(terms))) if len(terms) > 1 else None,
    )


def knn_delta_bound(k: int, num_classes: int, delta_conf: float, epsilon: float, lipschitz: float, r0: float) -> float:
    """High-probability bound on the kNN score error at one point.

    ``sqrt(ln(2K/delta) / (2k)) + slope(eps) * L * r0``; holds with
    probability at least ``1 - delta - exp(-(1 - ln 2) k)``.
    """
    if not 0.0 < delta_conf < 1.0:
        raise InvalidParameterError(f"delta_conf must lie in (0, 1), got {delta_conf}")
    if k < 1 or num_classes < 1:
        raise InvalidParameterError("k and num_classes must be positive")
    if lipschitz < 0 or r0 < 0:
        raise InvalidParameterError("lipschitz and r0 must be nonnegative")
    hoeffding = math.sqrt(math.log(2.0 * num_classes / delta_conf) / (2.0 * k))
    return hoeffding + channel_slope(epsilon) * lipschitz * r0


def knn_bound_failure_probability(k: int, delta_conf: float) -> float:
    return delta_conf + math.exp(-(1.0 - math.log(2.0)) * k)


def ball_mass(task: SyntheticTask, x, r: float) -> float:
    """Feature-distribution mass of the disk ``B(x, r)``.

    Each component contributes a noncentral chi-square (2 dof) CDF.
    """
    x = np.asarray(x, dtype=float)
    nc = np.sum((task.means - x) ** 2, axis=1) / task.sigma**2
    return float(np.mean(stats.ncx2.cdf((r / task.sigma) ** 2, df=2, nc=nc)))


def r0_radius(task: SyntheticTask, x, k: int, n_train: int, tol: float = 1e-4) -> float:
    """Smallest radius whose disk around ``x`` holds mass ``2k/N``."""
    target = 2.0 * k / n_train
    if target >= 1.0:
        raise InvalidParameterError("2k/N must be below 1")
    hi = task.sigma
    while ball_mass(task, x, hi) < target:
        hi *= 2.0
    return float(optimize.bisect(lambda r: ball_mass(task, x, r) - target, 0.0, hi, xtol=tol))
