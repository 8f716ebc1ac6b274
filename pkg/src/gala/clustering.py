"""K-means over embedding vectors.

Lloyd iterations from a seeded k-means++ start, followed by a single-point
move refinement pass so the result is stable under moving any one point to
another cluster. All work happens on a canonical (lexicographically sorted)
copy of the points, which makes the fitted centroids independent of the
input order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix, check_positive_int
from .exceptions import ValidationError


@dataclass(frozen=True, eq=False)
class ClusterModel:
    centroids: np.ndarray
    assignments: np.ndarray
    objective: float
    objective_history: tuple = field(default_factory=tuple)
    n_iter: int = 0

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def members(self, b: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == b)


def squared_distances(X, C):
    """``(n, B)`` matrix of squared Euclidean distances, summed in fixed order."""
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("nbd,nbd->nb", diff, diff)


def assign_to_clusters(points, centroids) -> np.ndarray:
    """Nearest-centroid index for every point; ties go to the lowest index."""
    C = check_matrix(centroids, name="centroids", code="DIM_MISMATCH")
    X = check_matrix(points, n_features=C.shape[1], name="points", code="DIM_MISMATCH",
                     allow_empty=True)
    if X.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmin(squared_distances(X, C), axis=1).astype(np.int64)


def objective(points, assignments, centroids) -> float:
    X = np.asarray(points, dtype=np.float64)
    diff = X - np.asarray(centroids)[assignments]
    return float(np.sum(np.einsum("nd,nd->n", diff, diff)))


def kmeans_plusplus(X, n_clusters, rng) -> np.ndarray:
    """Indices of ``n_clusters`` distinct seed points chosen by D^2 sampling.

    When every remaining point coincides with a chosen seed the next seed is
    drawn uniformly among the points not yet chosen.
    """
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, n_clusters):
        weights = closest.copy()
        weights[chosen] = 0.0
        total = weights.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=weights / total))
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(free[rng.integers(free.size)])
        chosen.append(idx)
        closest = np.minimum(closest, np.sum((X - X[idx]) ** 2, axis=1))
    return np.asarray(chosen, dtype=np.int64)


def _centroids(X, labels, n_clusters):
    return np.stack([X[labels == b].mean(axis=0) for b in range(n_clusters)])


def _repair_empty(X, labels, centroids, n_clusters):
    """Give each empty cluster the point farthest from its centroid in the largest cluster."""
    labels = labels.copy()
    while True:
        counts = np.bincount(labels, minlength=n_clusters)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            return labels
        donor = int(np.argmax(counts))
        members = np.flatnonzero(labels == donor)
        dist = np.sum((X[members] - centroids[donor]) ** 2, axis=1)
        labels[members[int(np.argmax(dist))]] = int(empty[0])


def _refine_single_moves(X, labels, centroids, max_passes):
    """Move single points between clusters while doing so lowers the objective.

    Moving ``x`` from cluster ``a`` (size ``n_a > 1``) to ``b`` changes the
    objective by ``n_b/(n_b+1)|x-c_b|^2 - n_a/(n_a-1)|x-c_a|^2``.
    """
    n_clusters = centroids.shape[0]
    counts = np.bincount(labels, minlength=n_clusters).astype(np.float64)
    sums = centroids * counts[:, None]
    n_passes = 0
    for _ in range(max_passes):
        moved = False
        n_passes += 1
        for i in range(X.shape[0]):
            a = labels[i]
            if counts[a] <= 1:
                continue
            x = X[i]
            d2 = np.sum((sums / counts[:, None] - x) ** 2, axis=1)
            leave = counts[a] / (counts[a] - 1.0) * d2[a]
            join = counts / (counts + 1.0) * d2
            join[a] = np.inf
            b = int(np.argmin(join))
            if leave - join[b] > 1e-9 * leave:
                sums[a] -= x
                sums[b] += x
                counts[a] -= 1.0
                counts[b] += 1.0
                labels[i] = b
                moved = True
        if not moved:
            break
    return labels, n_passes


def kmeans(points, n_clusters, seed=0, max_iters=100, tol=1e-6) -> ClusterModel:
    """Cluster ``points`` into ``n_clusters`` groups minimizing within-cluster squared error.

    Parameters
    ----------
    points : array-like of shape (n, d)
    n_clusters : int
        Number of clusters B, ``1 <= B <= n``.
    seed : int
        Seed of the k-means++ initialization.
    max_iters : int
        Cap on Lloyd iterations (and on refinement passes).
    tol : float
        Stop Lloyd iterations once the relative objective decrease drops below this.

    Returns
    -------
    ClusterModel
        Every cluster is non-empty and every centroid is the mean of its
        members. ``objective_history`` is non-increasing.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValidationError("points must be an (n, d) matrix with d >= 1", "DEGENERATE_DIM")
    X = check_matrix(X, name="points", code="DEGENERATE_DIM", allow_empty=True)
    B = check_positive_int(n_clusters, "n_clusters")
    n = X.shape[0]
    if n < B:
        raise ValidationError(f"{n} points cannot form {B} clusters", "TOO_FEW_POINTS")

    order = np.lexsort(X.T[::-1])
    Xs = X[order]
    rng = np.random.default_rng(seed)
    centroids = Xs[kmeans_plusplus(Xs, B, rng)]

    labels = _repair_empty(Xs, assign_to_clusters(Xs, centroids), centroids, B)
    centroids = _centroids(Xs, labels, B)
    history = [objective(Xs, labels, centroids)]
    n_iter = 1
    while n_iter < max_iters:
        new = _repair_empty(Xs, assign_to_clusters(Xs, centroids), centroids, B)
        if np.array_equal(new, labels):
            break
        labels = new
        centroids = _centroids(Xs, labels, B)
        history.append(objective(Xs, labels, centroids))
        n_iter += 1
        prev, cur = history[-2], history[-1]
        if prev <= 0.0 or (prev - cur) < tol * prev:
            break

    refined, _ = _refine_single_moves(Xs, labels.copy(), centroids, max_iters)
    if not np.array_equal(refined, labels):
        labels = refined
        centroids = _centroids(Xs, labels, B)
        history.append(objective(Xs, labels, centroids))

    assignments = np.empty(n, dtype=np.int64)
    assignments[order] = labels
    centroids.setflags(write=False)
    assignments.setflags(write=False)
    return ClusterModel(centroids, assignments, history[-1], tuple(history), n_iter)


class KMeans(ClusterMixin, TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`kmeans`.

    Attributes
    ----------
    cluster_centers_ : ndarray of shape (n_clusters, n_features)
    labels_ : ndarray of shape (n_samples,)
    inertia_ : float
    objective_history_ : tuple of float
    """

    def __init__(self, n_clusters=8, max_iter=100, tol=1e-6, random_state=0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        model = kmeans(X, self.n_clusters, seed=self.random_state,
                       max_iters=self.max_iter, tol=self.tol)
        self.cluster_centers_ = model.centroids
        self.labels_ = model.assignments
        self.inertia_ = model.objective
        self.objective_history_ = model.objective_history
        self.n_iter_ = model.n_iter
        self.n_features_in_ = model.centroids.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self)
        return assign_to_clusters(X, self.cluster_centers_)

    def transform(self, X):
        check_is_fitted(self)
        X = check_matrix(X, n_features=self.n_features_in_)
        return np.sqrt(squared_distances(X, self.cluster_centers_))
