"""GALA sample selection and baseline strategies.

One round works in two stages:

* global: cluster the unlabeled target embeddings into ``B`` groups and keep,
  per group, the ``alpha`` percent most uncertain samples;
* local: place the source samples into the same groups, summarize each
  (group, source domain) pair by its mean vector, score every surviving
  candidate by ``uncertainty * d / max d`` where ``d`` is its distance to the
  closest source domain of its group, and take the best candidate per group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_vector
from .clustering import ClusterModel, assign_to_clusters, kmeans, kmeans_plusplus
from .embedding import EmbeddingBatch, embed_all
from .exceptions import ValidationError
from .types import Dataset, LabeledPool, ModelState, SelectionConfig

BASELINES = ("random", "entropy", "margin", "badge")


@dataclass(frozen=True, eq=False)
class DomainCentroid:
    cluster: int
    domain: int
    mean_vec: np.ndarray
    count: int


@dataclass(frozen=True)
class CandidateScore:
    sample_id: int
    cluster: int
    uncertainty: float
    domain_distance: float
    v: float


@dataclass(frozen=True, eq=False)
class SelectionResult:
    round: int
    selected_ids: tuple
    scores: tuple = ()
    clusters: Optional[ClusterModel] = field(default=None, repr=False)

    def __eq__(self, other):
        if not isinstance(other, SelectionResult):
            return NotImplemented
        return (self.round, self.selected_ids, self.scores) == (
            other.round, other.selected_ids, other.scores)

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "selected_ids": list(self.selected_ids),
            "scores": [
                {"id": s.sample_id, "cluster": s.cluster, "uncertainty": s.uncertainty,
                 "domain_distance": s.domain_distance, "v": s.v}
                for s in self.scores
            ],
        }


def n_survivors(size: int, alpha_percent: float) -> int:
    """``ceil(alpha% * size)`` computed exactly on the decimal value of alpha, at least 1."""
    frac = Fraction(str(alpha_percent)) * size / 100
    return max(1, min(size, math.ceil(frac)))


def _round_seed(seed, rnd):
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(rnd)])


def global_step(bundles: EmbeddingBatch, cfg: SelectionConfig, round: int = 0):
    """Cluster the target embeddings and keep the most uncertain members of each cluster.

    Returns the :class:`ClusterModel` (assignments aligned with ``bundles``)
    and one array of candidate sample ids per cluster, most uncertain first
    (lower id first on ties).
    """
    B = cfg.budget_per_round
    if len(bundles) < B:
        raise ValidationError(
            f"{len(bundles)} unlabeled targets for a budget of {B}", "TOO_FEW_TARGETS")
    cm = kmeans(bundles.space(cfg.global_embedding), B, seed=_round_seed(cfg.rng_seed, round),
                max_iters=cfg.kmeans_max_iters, tol=cfg.kmeans_tol)
    candidates = []
    for b in range(B):
        members = cm.members(b)
        order = np.lexsort((bundles.ids[members], -bundles.uncertainty[members]))
        keep = n_survivors(members.size, cfg.alpha_percent)
        candidates.append(bundles.ids[members[order[:keep]]])
    return cm, candidates


def domain_statistics(features, domains, assignments, n_clusters, n_source_domains=None):
    """Mean vector of every non-empty (cluster, source domain) group."""
    X = np.asarray(features, dtype=np.float64)
    domains = np.asarray(domains, dtype=np.int64)
    assignments = np.asarray(assignments, dtype=np.int64)
    if X.shape[0] == 0:
        return []
    K = int(domains.max()) + 1 if n_source_domains is None else n_source_domains
    out = []
    for b in range(n_clusters):
        in_b = assignments == b
        for k in range(K):
            mask = in_b & (domains == k)
            count = int(mask.sum())
            if count:
                out.append(DomainCentroid(b, k, X[mask].mean(axis=0), count))
    return out


def _stats(V):
    """Scalar mean and population std over the last axis."""
    mu = V.mean(axis=-1)
    sigma = np.sqrt(np.mean((V - mu[..., None]) ** 2, axis=-1))
    return mu, sigma


def _distance_from_stats(mu_s, sd_s, mu_t, sd_t, mode, eps):
    if mode == "standardized":
        return np.abs(mu_s / np.sqrt(sd_s ** 2 + eps) - mu_t / np.sqrt(sd_t ** 2 + eps))
    if mode == "mean_only":
        return np.abs(mu_s - mu_t)
    if mode == "wasserstein":
        return (mu_s - mu_t) ** 2 + (sd_s ** 2 + sd_t ** 2 - 2.0 * sd_s * sd_t)
    raise ValidationError(f"unknown distance mode {mode!r}", "BAD_CONFIG")


def pair_distance(centroid_vec, target_vec, mode="standardized", epsilon=1e-5) -> float:
    """Distance between two vectors through their scalar channel statistics.

    ``standardized`` compares variance-normalized means, ``mean_only`` the
    plain means, and ``wasserstein`` the 2-Wasserstein distance between
    the two fitted 1-D Gaussians.
    """
    c = check_vector(centroid_vec, "centroid_vec")
    t = check_vector(target_vec, "target_vec")
    if c.shape != t.shape:
        raise ValidationError(f"dimension mismatch {c.size} vs {t.size}", "DIM_MISMATCH")
    mu_s, sd_s = _stats(c)
    mu_t, sd_t = _stats(t)
    return float(max(0.0, _distance_from_stats(mu_s, sd_s, mu_t, sd_t, mode, epsilon)))


def aggregate_distance(per_domain: Sequence[float], mode="minimum") -> float:
    values = np.asarray(per_domain, dtype=np.float64)
    if values.size == 0:
        raise ValidationError("no per-domain distances to aggregate", "EMPTY_LIST")
    if mode == "minimum":
        return float(values.min())
    if mode == "average":
        return float(values.mean())
    raise ValidationError(f"unknown aggregation mode {mode!r}", "BAD_CONFIG")


def combine_scores(candidates, uncertainty, domain_distance, cluster_of=None, round=0):
    """Score candidates by ``uncertainty * d / max d`` and pick the best one per cluster.

    ``uncertainty`` and ``domain_distance`` map sample id to value. The max is
    taken over all candidates of the round. When every distance is zero the
    normalized distance is taken as 1, so the choice falls back to pure
    uncertainty. Ties go to the lowest id.
    """
    ids_by_cluster = [np.asarray(c, dtype=np.int64) for c in candidates]
    if any(c.size == 0 for c in ids_by_cluster):
        raise ValidationError("every cluster needs at least one candidate", "TOO_FEW_TARGETS")
    all_ids = np.concatenate(ids_by_cluster)
    max_d = max(float(domain_distance[int(i)]) for i in all_ids)
    scores, selected = [], []
    for b, ids in enumerate(ids_by_cluster):
        best, best_v = None, -np.inf
        for i in sorted(int(j) for j in ids):
            u = float(uncertainty[i])
            d = float(domain_distance[i])
            v = u * (d / max_d) if max_d > 0.0 else u
            scores.append(CandidateScore(i, b, u, d, v))
            if v > best_v:
                best, best_v = i, v
        selected.append(best)
    scores.sort(key=lambda s: s.sample_id)
    return SelectionResult(round, tuple(selected), tuple(scores))


def candidate_distances(candidates, target_vectors, target_ids, source_vectors, source_domains,
                        source_assignments, cfg: SelectionConfig, n_source_domains=None):
    """Aggregated distance from each candidate to the source domains of its cluster.

    Returns a dict mapping sample id to distance. A cluster with no source
    members at all is compared with per-domain means over every source sample.
    """
    S = np.asarray(source_vectors, dtype=np.float64)
    dom = np.asarray(source_domains, dtype=np.int64)
    if S.shape[0] == 0:
        raise ValidationError("no source samples to compare against", "NO_SOURCE_STATS")
    K = int(dom.max()) + 1 if n_source_domains is None else n_source_domains
    B = len(candidates)
    cents = domain_statistics(S, dom, source_assignments, B, K)
    by_cluster = {b: [] for b in range(B)}
    for c in cents:
        by_cluster[c.cluster].append(c.mean_vec)
    fallback = [S[dom == k].mean(axis=0) for k in range(K) if np.any(dom == k)]

    pos = {int(i): p for p, i in enumerate(target_ids)}
    T = np.asarray(target_vectors, dtype=np.float64)
    out = {}
    for b, ids in enumerate(candidates):
        U = np.stack(by_cluster[b] or fallback)
        mu_s, sd_s = _stats(U)
        rows = np.array([pos[int(i)] for i in ids], dtype=np.int64)
        mu_t, sd_t = _stats(T[rows])
        d = _distance_from_stats(mu_s[None, :], sd_s[None, :], mu_t[:, None], sd_t[:, None],
                                 cfg.distance_mode, cfg.epsilon)
        d = np.maximum(d, 0.0)
        agg = d.min(axis=1) if cfg.aggregation_mode == "minimum" else d.mean(axis=1)
        for i, val in zip(ids, agg):
            out[int(i)] = float(val)
    return out


def local_step(candidates, target_bundles: EmbeddingBatch, source_features, source_domains,
               source_assignments, cfg: SelectionConfig, n_source_domains=None, round=0):
    """Pick one sample per cluster by the combined uncertainty and domain-gap score.

    ``source_features`` must already live in the local embedding space
    selected by ``cfg.local_embedding``.
    """
    dist = candidate_distances(candidates, target_bundles.space(cfg.local_embedding),
                               target_bundles.ids, source_features, source_domains,
                               source_assignments, cfg, n_source_domains)
    unc = dict(zip(target_bundles.ids.tolist(), target_bundles.uncertainty.tolist()))
    return combine_scores(candidates, unc, dist, round=round)


def bridge_centroids(cm: ClusterModel, target: EmbeddingBatch, cfg: SelectionConfig):
    """Cluster centers expressed in the local embedding space.

    When both steps use the same space these are the k-means centroids;
    otherwise each center is the mean local-space vector of the cluster's
    target members.
    """
    if cfg.global_embedding == cfg.local_embedding:
        return cm.centroids
    T = target.space(cfg.local_embedding)
    return np.stack([T[cm.assignments == b].mean(axis=0) for b in range(cm.n_clusters)])


def select_from_embeddings(target: EmbeddingBatch, source: EmbeddingBatch, source_domains,
                           cfg: SelectionConfig, n_source_domains=None, round=0):
    """One full GALA round on precomputed embeddings."""
    cm, cands = global_step(target, cfg, round)
    S = source.space(cfg.local_embedding)
    if S.shape[0] == 0:
        raise ValidationError("no source samples to compare against", "NO_SOURCE_STATS")
    src_assign = assign_to_clusters(S, bridge_centroids(cm, target, cfg))
    res = local_step(cands, target, S, source_domains, src_assign, cfg, n_source_domains, round)
    return SelectionResult(res.round, res.selected_ids, res.scores, cm)


def select_round(pool: LabeledPool, model: ModelState, ds: Dataset, cfg: SelectionConfig,
                 round: int = 0) -> SelectionResult:
    """Choose ``cfg.budget_per_round`` target ids from ``pool.remaining_ids``."""
    if len(pool.remaining_ids) < cfg.budget_per_round:
        raise ValidationError(
            f"{len(pool.remaining_ids)} unlabeled targets for a budget of "
            f"{cfg.budget_per_round}", "TOO_FEW_TARGETS")
    target = embed_all(model, ds, pool.remaining_ids)
    src_ids = ds.source_ids
    source = embed_all(model, ds, src_ids)
    src_dom = ds.domains[ds.rows(src_ids)]
    return select_from_embeddings(target, source, src_dom, cfg, ds.n_source_domains, round)


def entropy(P):
    P = np.asarray(P, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log(P), 0.0)
    return -terms.sum(axis=1)


def margin(P):
    top2 = np.sort(P, axis=1)[:, -2:]
    return top2[:, 1] - top2[:, 0]


def baseline_from_embeddings(strategy, target: EmbeddingBatch, budget, seed=0) -> list:
    ids = target.ids
    n = len(ids)
    if n < budget:
        raise ValidationError(f"{n} unlabeled targets for a budget of {budget}", "TOO_FEW_TARGETS")
    rng = np.random.default_rng(seed)
    if strategy == "random":
        picked = rng.choice(n, size=budget, replace=False)
    elif strategy == "entropy":
        picked = np.lexsort((ids, -entropy(target.probs)))[:budget]
    elif strategy == "margin":
        picked = np.lexsort((ids, margin(target.probs)))[:budget]
    elif strategy == "badge":
        picked = kmeans_plusplus(target.grad_embeds, budget, rng)
    else:
        raise ValidationError(f"unknown strategy {strategy!r}", "BAD_CONFIG")
    return [int(ids[i]) for i in picked]


def baseline_select(strategy, pool: LabeledPool, model: ModelState, ds: Dataset, budget, seed=0):
    """Selection by one of the comparison strategies: random, entropy, margin, badge."""
    if strategy not in BASELINES:
        raise ValidationError(f"unknown strategy {strategy!r}", "BAD_CONFIG")
    if len(pool.remaining_ids) < budget:
        raise ValidationError(
            f"{len(pool.remaining_ids)} unlabeled targets for a budget of {budget}",
            "TOO_FEW_TARGETS")
    return baseline_from_embeddings(strategy, embed_all(model, ds, pool.remaining_ids),
                                    budget, seed)


class GALASampler(BaseEstimator):
    """Batch sampler with the scikit-learn parameter interface.

    Parameters mirror :class:`~gala.types.SelectionConfig`. After
    :meth:`select`, ``result_`` holds the last :class:`SelectionResult`.

    Examples
    --------
    >>> sampler = GALASampler(budget_per_round=4, alpha_percent=60)
    >>> sampler.get_params()["alpha_percent"]
    60
    """

    def __init__(self, budget_per_round=4, rounds=5, alpha_percent=60, epsilon=1e-5,
                 distance_mode="standardized", aggregation_mode="minimum",
                 global_embedding="gradient", local_embedding="feature",
                 kmeans_max_iters=100, kmeans_tol=1e-6, random_state=0):
        self.budget_per_round = budget_per_round
        self.rounds = rounds
        self.alpha_percent = alpha_percent
        self.epsilon = epsilon
        self.distance_mode = distance_mode
        self.aggregation_mode = aggregation_mode
        self.global_embedding = global_embedding
        self.local_embedding = local_embedding
        self.kmeans_max_iters = kmeans_max_iters
        self.kmeans_tol = kmeans_tol
        self.random_state = random_state

    def to_config(self) -> SelectionConfig:
        params = self.get_params()
        params["rng_seed"] = params.pop("random_state")
        return SelectionConfig(**params)

    @classmethod
    def from_config(cls, cfg: SelectionConfig) -> "GALASampler":
        kw = dict(cfg.__dict__)
        kw["random_state"] = kw.pop("rng_seed")
        return cls(**kw)

    def select(self, model: ModelState, ds: Dataset, pool: Optional[LabeledPool] = None,
               round: int = 0) -> SelectionResult:
        pool = LabeledPool.from_dataset(ds) if pool is None else pool
        self.result_ = select_round(pool, model, ds, self.to_config(), round)
        return self.result_
