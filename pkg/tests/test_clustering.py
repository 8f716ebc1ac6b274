import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from gala import kmeans
from gala.clustering import KMeans, assign_to_clusters
from gala.exceptions import ValidationError
from oracles import best_single_move_gain, kmeans_objective, nearest


def plain_lloyd(X, B, rng, iters=100):
    """Textbook Lloyd from B distinct random points; independent of the package."""
    C = X[rng.choice(len(X), B, replace=False)].copy()
    for _ in range(iters):
        lab = np.argmin(((X[:, None] - C[None]) ** 2).sum(-1), axis=1)
        newC = np.array([X[lab == b].mean(0) if np.any(lab == b) else C[b] for b in range(B)])
        if np.allclose(newC, C):
            break
        C = newC
    return kmeans_objective(X.tolist(), lab.tolist(), B)


def test_two_separated_duplicates_have_zero_objective():
    X = np.array([[0.0, 0.0]] * 5 + [[10.0, 10.0]] * 5)
    cm = kmeans(X, 2, seed=3)
    assert cm.objective == 0.0
    assert len(set(cm.assignments[:5])) == 1 and len(set(cm.assignments[5:])) == 1
    assert cm.assignments[0] != cm.assignments[5]


def test_one_cluster_per_point(rng):
    X = rng.normal(size=(7, 3))
    cm = kmeans(X, 7)
    assert cm.objective == 0.0
    assert sorted(cm.assignments) == list(range(7))


def test_quality_against_random_restarts(rng):
    X = np.concatenate([rng.normal(c, 1.0, size=(10, 2)) for c in ([0, 0], [4, 0], [0, 4])])
    cm = kmeans(X, 3, seed=0)
    restarts = [plain_lloyd(X, 3, np.random.default_rng(s)) for s in range(100)]
    assert cm.objective <= np.median(restarts) + 1e-9
    gain, base = best_single_move_gain(X.tolist(), cm.assignments.tolist(), 3)
    assert base == pytest.approx(cm.objective, rel=1e-12)
    assert gain <= 1e-9 * max(base, 1.0)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 40), d=st.integers(1, 4), B=st.integers(1, 6),
       seed=st.integers(0, 2**31))
def test_objective_monotone_and_clusters_nonempty(n, d, B, seed):
    B = min(B, n)
    rng = np.random.default_rng(seed)
    X = np.round(rng.normal(size=(n, d)), 1)  # rounding forces duplicates
    cm = kmeans(X, B, seed=seed)
    h = cm.objective_history
    assert all(b <= a + 1e-12 * max(a, 1.0) for a, b in zip(h, h[1:]))
    assert np.all(np.bincount(cm.assignments, minlength=B) > 0)
    np.testing.assert_allclose(
        cm.centroids, [X[cm.assignments == b].mean(0) for b in range(B)], atol=1e-12)
    assert cm.objective == pytest.approx(
        kmeans_objective(X.tolist(), cm.assignments.tolist(), B), rel=1e-9, abs=1e-12)


def test_permutation_invariance(rng):
    X = rng.normal(size=(50, 3))
    base = kmeans(X, 4, seed=11)
    for _ in range(10):
        perm = rng.permutation(50)
        cm = kmeans(X[perm], 4, seed=11)
        np.testing.assert_array_equal(cm.assignments, base.assignments[perm])
        np.testing.assert_array_equal(cm.centroids, base.centroids)


def test_duplicate_points_still_give_nonempty_clusters():
    X = np.zeros((6, 2))
    X[5] = 1.0
    cm = kmeans(X, 3, seed=0)
    assert np.all(np.bincount(cm.assignments, minlength=3) > 0)


def test_errors():
    with pytest.raises(ValidationError) as err:
        kmeans(np.zeros((2, 3)), 3)
    assert err.value.code == "TOO_FEW_POINTS"
    with pytest.raises(ValidationError) as err:
        kmeans(np.zeros((4, 0)), 2)
    assert err.value.code == "DEGENERATE_DIM"
    with pytest.raises(ValidationError) as err:
        assign_to_clusters(np.zeros((3, 2)), np.zeros((2, 3)))
    assert err.value.code == "DIM_MISMATCH"


def test_assignment_matches_nearest_oracle(rng):
    C = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]])
    X = np.vstack([rng.normal(size=(40, 2)), [[1.0, 0.0], [1.0, 1.0]]])  # last two are ties
    got = assign_to_clusters(X, C)
    assert got.tolist() == [nearest(list(x), C.tolist()) for x in X]
    assert got[-2] == 0 and got[-1] == 0


def test_estimator_interface(rng):
    X = rng.normal(size=(30, 2))
    est = KMeans(n_clusters=3, random_state=5)
    assert clone(est).get_params() == est.get_params()
    labels = est.fit_predict(X)
    np.testing.assert_array_equal(labels, kmeans(X, 3, seed=5).assignments)
    np.testing.assert_array_equal(est.predict(X), labels)
    assert est.transform(X).shape == (30, 3)
    assert est.inertia_ == pytest.approx(kmeans(X, 3, seed=5).objective)
