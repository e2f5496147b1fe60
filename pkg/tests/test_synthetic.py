import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from vecldp.mechanisms import InvalidParameterError
from vecldp.synthetic import (
    SyntheticTask,
    bayes_accuracy,
    bayes_predict,
    eta,
    eta_gaps,
    eta_gradient,
    lipschitz_estimate,
    sample,
)


def test_means_on_unit_circle_k4():
    np.testing.assert_allclose(SyntheticTask(4, 0.1).means, [[1, 0], [0, 1], [-1, 0], [0, -1]], atol=1e-15)


def test_task_validation():
    with pytest.raises(InvalidParameterError):
        SyntheticTask(1, 0.1)
    with pytest.raises(InvalidParameterError):
        SyntheticTask(3, 0.0)


def test_sample_rejects_empty():
    with pytest.raises(InvalidParameterError):
        sample(SyntheticTask(3, 0.1), 0, np.random.default_rng())


def test_sample_label_frequencies_uniform():
    data = sample(SyntheticTask(5, 0.3), 100_000, np.random.default_rng(0))
    assert np.all(np.abs(np.bincount(data.labels, minlength=5) / 1e5 - 0.2) < 0.01)


def test_sample_class_means():
    task = SyntheticTask(6, 0.4)
    data = sample(task, 60_000, np.random.default_rng(1))
    for j in range(6):
        pts = data.features[data.labels == j]
        assert np.all(np.abs(pts.mean(axis=0) - task.means[j]) < 5 * task.sigma / 100)


def test_sample_reproducible():
    task = SyntheticTask(3, 0.2)
    a = sample(task, 50, np.random.default_rng(7))
    b = sample(task, 50, np.random.default_rng(7))
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_eta_at_origin_uniform():
    np.testing.assert_allclose(eta(SyntheticTask(7, 0.3), [0.0, 0.0]), np.full(7, 1 / 7), atol=1e-12)
    assert eta_gaps(eta(SyntheticTask(7, 0.3), [0.0, 0.0])) == pytest.approx(0.0, abs=1e-12)


def test_eta_two_class_closed_form():
    task = SyntheticTask(2, 0.5)
    assert eta(task, task.means[0])[0] == pytest.approx(1 / (1 + math.exp(-8)), abs=1e-12)
    assert eta(task, task.means[0])[0] == pytest.approx(0.99966, abs=1e-5)


@settings(max_examples=80, deadline=None)
@given(
    st.integers(2, 1000),
    st.floats(1e-3, 1e3),
    st.tuples(st.floats(-3, 3), st.floats(-3, 3)),
)
def test_eta_sums_to_one(K, sigma, x):
    e = eta(SyntheticTask(K, sigma), np.array(x))
    assert np.all(np.isfinite(e))
    assert abs(e.sum() - 1) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40), st.floats(0.01, 5), st.tuples(st.floats(-2, 2), st.floats(-2, 2)))
def test_eta_rotational_symmetry(K, sigma, x):
    task = SyntheticTask(K, sigma)
    x = np.array(x)
    a = 2 * np.pi / K
    rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    np.testing.assert_allclose(eta(task, rot @ x), np.roll(eta(task, x), 1), atol=1e-9)


def test_bayes_predict_examples():
    assert bayes_predict(SyntheticTask(4, 0.1), [1.0, 0.0]) == 0
    # exactly on the bisector of the two means: lowest index wins
    task = SyntheticTask(2, 0.3)
    assert bayes_predict(task, task.means.mean(axis=0)) == 0


@pytest.mark.parametrize("K", [2, 3, 10, 57])
def test_bayes_predict_at_means(K):
    task = SyntheticTask(K, 0.2)
    np.testing.assert_array_equal(bayes_predict(task, task.means), np.arange(K))


def test_bayes_predict_agrees_with_eta_argmax():
    task = SyntheticTask(9, 0.15)
    x = np.random.default_rng(3).uniform(-1.5, 1.5, size=(10_000, 2))
    np.testing.assert_array_equal(bayes_predict(task, x), np.argmax(eta(task, x), axis=1))


def test_bayes_accuracy_two_class_matches_normal_tail():
    task = SyntheticTask(2, 0.5)
    exact = norm.cdf(1 / task.sigma)
    assert exact == pytest.approx(0.9772, abs=1e-4)
    n = 1_000_000
    est = bayes_accuracy(task, n, np.random.default_rng(0))
    assert abs(est - exact) < 0.002
    assert abs(est - exact) < 3 * math.sqrt(exact * (1 - exact) / n)


def test_bayes_accuracy_limits():
    assert bayes_accuracy(SyntheticTask(10, 1e-4), 10_000, np.random.default_rng(0)) == 1.0
    n = 100_000
    acc = bayes_accuracy(SyntheticTask(10, 100.0), n, np.random.default_rng(1))
    assert abs(acc - 0.1) < 3 * math.sqrt(0.09 / n)


def test_eta_gradient_matches_finite_differences():
    task = SyntheticTask(5, 0.4)
    x = np.array([0.3, -0.2])
    h = 1e-6
    fd = np.stack([(eta(task, x + h * e) - eta(task, x - h * e)) / (2 * h) for e in np.eye(2)], axis=1)
    np.testing.assert_allclose(eta_gradient(task, x), fd, atol=1e-7)


def test_lipschitz_estimate_dominates_two_class_peak():
    # K=2: on the bisector |grad eta_1| = |mu_1 - mu_2| / (4 sigma^2)
    task = SyntheticTask(2, 0.5)
    assert lipschitz_estimate(task) >= 2 / (4 * 0.25)
