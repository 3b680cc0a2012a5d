import numpy as np
import pytest

from caerom.clustering import KMeansModel, kmeans_fit
from caerom.pod import (RankDeficiencyError, cpod_decode, cpod_fit, pod_decode, pod_encode,
                        pod_fit)


def test_rank_one_exact():
    X = np.tile(np.random.default_rng(0).standard_normal((30, 1)), (1, 6))
    basis = pod_fit(X, 1)
    assert np.max(np.abs(X - basis.decode(basis.encode(X)))) <= 1e-12
    with pytest.raises(RankDeficiencyError):
        pod_fit(X, 2)


def test_eckart_young_random_matrix():
    X = np.random.default_rng(1).standard_normal((40, 20))
    s = np.linalg.svd(X, compute_uv=False)
    for n in range(1, 20):
        basis = pod_fit(X, n)
        err2 = np.linalg.norm(X - basis.decode(basis.encode(X))) ** 2
        assert err2 == pytest.approx(np.sum(s[n:] ** 2), rel=1e-10)
        assert np.max(np.abs(basis.V.T @ basis.V - np.eye(n))) <= 1e-12
    assert np.all(np.diff(basis.singular_values) <= 0)


def test_range_checks():
    X = np.random.default_rng(2).standard_normal((10, 4))
    for n in (0, 5):
        with pytest.raises(ValueError):
            pod_fit(X, n)
    basis = pod_fit(X, 2)
    with pytest.raises(ValueError):
        pod_encode(basis, np.ones(9))
    with pytest.raises(ValueError):
        pod_decode(basis, np.ones(3))


def test_encode_decode_projection():
    rng = np.random.default_rng(3)
    basis = pod_fit(rng.standard_normal((50, 12)), 5)
    v = basis.V @ rng.standard_normal(5)
    assert np.max(np.abs(basis.decode(basis.encode(v)) - v)) <= 1e-12
    rho = rng.standard_normal(5)
    assert np.max(np.abs(basis.encode(basis.decode(rho)) - rho)) <= 1e-12
    w = rng.standard_normal(50)
    assert np.max(np.abs(basis.V.T @ (w - basis.decode(basis.encode(w))))) <= 1e-12


def test_weighted_basis_is_mass_orthonormal():
    rng = np.random.default_rng(4)
    M = rng.uniform(0.5, 2.0, 30)
    basis = pod_fit(rng.standard_normal((30, 10)), 4, weights=M)
    assert np.max(np.abs(basis.V.T @ (M[:, None] * basis.V) - np.eye(4))) <= 1e-12
    v = basis.V @ rng.standard_normal(4)
    assert np.max(np.abs(basis.decode(basis.encode(v)) - v)) <= 1e-12


def test_single_cluster_reduces_to_pod(small_data):
    X = small_data.states
    basis = pod_fit(X, 3)
    model = cpod_fit(X, 3, kmeans_fit(basis.encode(X).T, 1), basis)
    rho = np.random.default_rng(5).standard_normal((3, 7))
    assert np.max(np.abs(model.decode(rho) - basis.decode(rho))) <= 1e-12


def test_undersized_cluster_is_named(small_data):
    X = small_data.states
    labels = np.zeros(X.shape[1], dtype=int)
    labels[0] = 1
    km = KMeansModel(np.zeros((2, 3)), labels, [0.0])
    with pytest.raises(ValueError, match="cluster 1 has 1 members"):
        cpod_fit(X, 3, km)


def test_centroid_selects_its_cluster_and_decode_is_piecewise_linear(small_data):
    X = small_data.states
    basis = pod_fit(X, 3)
    model = cpod_fit(X, 3, kmeans_fit(basis.encode(X).T, 3, seed=0), basis)
    for l, c in enumerate(model.kmeans.centroids):
        assert np.array_equal(cpod_decode(model, c), model.decoders[l] @ c)
    c = model.kmeans.centroids[0]
    r1, r2 = c + 1e-3, c - 1e-3
    for a in np.linspace(0, 1, 5):
        mid = a * r1 + (1 - a) * r2
        assert np.max(np.abs(model.decode(mid) - a * model.decode(r1)
                             - (1 - a) * model.decode(r2))) <= 1e-12
    batch = model.decode(basis.encode(X))
    single = model.decode(basis.encode(X[:, 4]))
    assert np.max(np.abs(batch[:, 4] - single)) <= 1e-12 * np.max(np.abs(single))


def test_vortex_street_trends(vortex):
    X = vortex.train.states
    errors = []
    for n in (2, 3, 5, 8, 12):
        basis = pod_fit(X, n)
        errors.append(vortex.mean_error(X, basis.decode(basis.encode(X))))
    assert all(b <= a for a, b in zip(errors, errors[1:]))
    basis = pod_fit(X, 3)
    P = basis.encode(X)
    cpod = cpod_fit(X, 3, kmeans_fit(P.T, 5, seed=0, restarts=10), basis)
    assert vortex.mean_error(X, cpod.decode(P)) <= errors[1]
