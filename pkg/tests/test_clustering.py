import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from caerom.clustering import kmeans_assign, kmeans_fit


def test_separated_clouds():
    rng = np.random.default_rng(0)
    a = rng.normal(0.0, 0.1, (20, 2))
    b = rng.normal(10.0, 0.1, (15, 2))
    model = kmeans_fit(np.vstack([a, b]), 2, seed=1)
    assert len(set(model.labels[:20])) == 1 and len(set(model.labels[20:])) == 1
    assert model.labels[0] != model.labels[20]
    scatter = ((a - a.mean(0)) ** 2).sum() + ((b - b.mean(0)) ** 2).sum()
    assert model.inertia == pytest.approx(scatter, rel=1e-12)


def test_six_points_match_brute_force():
    X = np.array([[0.0], [1.0], [1.5], [4.0], [4.2], [9.0]])
    best = np.inf
    for mask in itertools.product((0, 1), repeat=5):
        lab = np.array((0,) + mask)
        if not any(mask):
            continue
        best = min(best, sum(((X[lab == l] - X[lab == l].mean()) ** 2).sum() for l in (0, 1)))
    assert kmeans_fit(X, 2, seed=0).inertia == pytest.approx(best, rel=1e-12)


def test_assign_ties_and_centroids():
    model = kmeans_fit(np.array([[0.0, 0.0], [2.0, 0.0], [10.0, 0.0]]), 3, seed=0)
    for l, c in enumerate(model.centroids):
        assert kmeans_assign(model, c) == l
    model.centroids = np.array([[0.0, 0.0], [2.0, 0.0], [10.0, 0.0]])
    assert kmeans_assign(model, np.array([1.0, 0.0])) == 0
    assert kmeans_assign(model, np.array([[1.0, 0.0], [6.0, 0.0]])).tolist() == [0, 1]


def test_labels_follow_a_periodic_trajectory():
    t = np.arange(200)
    codes = np.column_stack([np.cos(2 * np.pi * t / 25), np.sin(2 * np.pi * t / 25)])
    model = kmeans_fit(codes, 5, seed=0, restarts=5)
    labels = kmeans_assign(model, codes)
    assert np.array_equal(labels[25:], labels[:-25])


def test_duplicate_points_leave_no_empty_cluster():
    model = kmeans_fit(np.zeros((6, 2)), 3, seed=0)
    assert sorted(set(model.labels.tolist())) == [0, 1, 2]


def test_argument_errors():
    with pytest.raises(ValueError):
        kmeans_fit(np.zeros((2, 2)), 3)
    with pytest.raises(ValueError):
        kmeans_fit(np.zeros((2, 2)), 0)


@given(st.integers(2, 40), st.integers(1, 4), st.integers(1, 6), st.integers(0, 10 ** 6))
def test_lloyd_properties(T, d, k, seed):
    k = min(k, T)
    X = np.random.default_rng(seed).standard_normal((T, d))
    model = kmeans_fit(X, k, seed=seed, restarts=2)
    hist = model.inertia_history
    assert all(b <= a for a, b in zip(hist, hist[1:]))
    assert set(model.labels.tolist()) == set(range(k))
    assert np.array_equal(kmeans_assign(model, X), model.labels)
    again = kmeans_fit(X, k, seed=seed, restarts=2)
    assert again.centroids.tobytes() == model.centroids.tobytes()
    assert np.array_equal(again.labels, model.labels)
