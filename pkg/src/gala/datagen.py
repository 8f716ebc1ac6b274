"""Synthetic multi-source classification tasks with controllable domain shift.

Class means sit at mutually maximal angles on a sphere of radius
``class_separation``. Every domain (sources and target) draws Gaussian
samples around them and then applies its own affine map: a rotation by a
fixed angle in a random plane mixture, a per-axis log-uniform scaling and a
translation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .exceptions import ConfigError
from .types import UNLABELED, Dataset


@dataclass(frozen=True)
class ScenarioConfig:
    """Generator settings.

    ``domain_shift`` is ``(rotation angle, translation norm, log-scale bound)``.
    """

    n_source_domains: int = 3
    samples_per_domain: int = 2000
    n_classes: int = 5
    feature_dim: int = 16
    class_separation: float = 3.0
    domain_shift: tuple = (1.0, 2.0, 0.4)
    noise_sigma: float = 1.0
    label_skew: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        shift = self.domain_shift
        if np.isscalar(shift):
            shift = (float(shift),) * 3
        shift = tuple(float(s) for s in shift)
        object.__setattr__(self, "domain_shift", shift)
        if len(shift) != 3 or any(s < 0 for s in shift):
            raise ConfigError("domain_shift needs three nonnegative bounds")
        if self.n_source_domains < 1 or self.n_classes < 2 or self.feature_dim < 1:
            raise ConfigError("need n_source_domains >= 1, n_classes >= 2, feature_dim >= 1")
        if self.samples_per_domain < 1:
            raise ConfigError("samples_per_domain must be >= 1")
        if not self.class_separation > 0 or self.noise_sigma < 0:
            raise ConfigError("class_separation must be > 0 and noise_sigma >= 0")
        if not 0 <= self.label_skew < 1:
            raise ConfigError("label_skew must lie in [0, 1)")

    @property
    def n_target(self) -> int:
        return self.samples_per_domain


def class_means(n_classes, dim, radius, seed=0):
    """Unit-radius-scaled class centers with pairwise angles as large as possible.

    With ``C <= dim + 1`` these are the vertices of a centered regular simplex;
    otherwise seeded random directions.
    """
    if n_classes - 1 <= dim:
        E = np.eye(n_classes) - 1.0 / n_classes
        # rows of E span a (C-1)-dim subspace; express them in an orthonormal basis of it
        U, S, Vt = np.linalg.svd(E)
        coords = U[:, : n_classes - 1] * S[: n_classes - 1]
        if n_classes == 2:
            coords = np.array([[1.0], [-1.0]])
        out = np.zeros((n_classes, dim))
        out[:, : coords.shape[1]] = coords
    else:
        out = np.random.default_rng(seed).normal(size=(n_classes, dim))
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return radius * out


def class_proportions(n_classes, domain, skew):
    w = 1.0 - skew * (((np.arange(n_classes) + domain) % n_classes) / max(1, n_classes - 1))
    return w / w.sum()


def class_counts(n, proportions):
    """Largest-remainder rounding of ``n * proportions``; each count within 1 of its target."""
    raw = n * np.asarray(proportions)
    counts = np.floor(raw).astype(np.int64)
    rest = n - counts.sum()
    order = np.lexsort((np.arange(len(raw)), -(raw - counts)))
    counts[order[:rest]] += 1
    return counts


def domain_transform(cfg: ScenarioConfig, domain: int):
    """``(linear, offset)`` of the affine map of one domain; identity when the shift is zero."""
    angle, trans, logscale = cfg.domain_shift
    d = cfg.feature_dim
    rng = np.random.default_rng([int(cfg.rng_seed) & 0xFFFFFFFFFFFFFFFF, 1, domain])
    A = rng.normal(size=(d, d))
    A = A - A.T
    norm = np.linalg.norm(A, 2)
    R = expm(A * (angle / norm)) if d > 1 and norm > 0 and angle > 0 else np.eye(d)
    scale = np.exp(logscale * rng.uniform(-1.0, 1.0, size=d))
    direction = rng.normal(size=d)
    offset = trans * rng.uniform(0.5, 1.0) * direction / np.linalg.norm(direction)
    return R * scale[None, :], offset


def _base_samples(cfg: ScenarioConfig, domain: int, means):
    rng = np.random.default_rng([int(cfg.rng_seed) & 0xFFFFFFFFFFFFFFFF, 0, domain])
    counts = class_counts(cfg.samples_per_domain,
                          class_proportions(cfg.n_classes, domain, cfg.label_skew))
    y = np.repeat(np.arange(cfg.n_classes), counts)
    y = y[rng.permutation(y.size)]
    X = means[y] + cfg.noise_sigma * rng.normal(size=(y.size, cfg.feature_dim))
    return X, y


def generate(cfg: ScenarioConfig, transform=True):
    """Build the dataset and the answer key of the target rows.

    Returns
    -------
    (Dataset, dict)
        Target rows are ``UNLABELED`` in the dataset; the dict maps their
        ids to the true labels.
    """
    means = class_means(cfg.n_classes, cfg.feature_dim, cfg.class_separation, cfg.rng_seed)
    K = cfg.n_source_domains
    feats, labels, domains = [], [], []
    for k in range(K + 1):
        X, y = _base_samples(cfg, k, means)
        if transform:
            L, t = domain_transform(cfg, k)
            X = X @ L.T + t
        feats.append(X)
        labels.append(y)
        domains.append(np.full(y.size, k))
    X = np.concatenate(feats)
    y = np.concatenate(labels)
    dom = np.concatenate(domains)
    ids = np.arange(y.size)
    is_target = dom == K
    key = {int(i): int(c) for i, c in zip(ids[is_target], y[is_target])}
    shown = np.where(is_target, UNLABELED, y)
    return Dataset(X, shown, dom, cfg.n_classes, K, ids), key
