"""Shared data model: datasets, model parameters, selection settings, pools."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

from .exceptions import ConfigError, ValidationError

UNLABELED = -1

DISTANCE_MODES = ("standardized", "mean_only", "wasserstein")
AGGREGATION_MODES = ("minimum", "average")
EMBEDDING_MODES = ("gradient", "feature")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """All samples of one experiment.

    Rows with ``domains < n_source_domains`` are labeled source samples; rows
    with ``domains == n_source_domains`` belong to the target domain and carry
    ``UNLABELED`` until annotated.

    Construction only coerces arrays; call :func:`validate_dataset` to check
    the invariants.
    """

    features: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    n_classes: int
    n_source_domains: int
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
        object.__setattr__(self, "features", _frozen(feats, np.float64))
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        object.__setattr__(self, "domains", _frozen(self.domains, np.int64))
        ids = np.arange(len(self.labels)) if self.ids is None else self.ids
        object.__setattr__(self, "ids", _frozen(ids, np.int64))
        object.__setattr__(self, "n_classes", int(self.n_classes))
        object.__setattr__(self, "n_source_domains", int(self.n_source_domains))

    def __len__(self):
        return self.features.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.n_classes == other.n_classes
            and self.n_source_domains == other.n_source_domains
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.domains, other.domains)
            and np.array_equal(self.ids, other.ids)
        )

    __hash__ = None

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def target_domain(self) -> int:
        return self.n_source_domains

    @property
    def source_mask(self) -> np.ndarray:
        return self.domains < self.n_source_domains

    @property
    def target_mask(self) -> np.ndarray:
        return self.domains == self.n_source_domains

    @property
    def target_ids(self) -> np.ndarray:
        return self.ids[self.target_mask]

    @property
    def source_ids(self) -> np.ndarray:
        return self.ids[self.source_mask]

    @cached_property
    def _row_of(self) -> dict:
        return {int(i): r for r, i in enumerate(self.ids)}

    def rows(self, ids: Iterable[int]) -> np.ndarray:
        """Row positions of the given sample ids (raises ``BAD_ID``)."""
        lookup = self._row_of
        try:
            return np.array([lookup[int(i)] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise ValidationError(f"unknown sample id {exc.args[0]}", "BAD_ID") from None

    def with_labels(self, ids: Sequence[int], labels: Sequence[int]) -> "Dataset":
        """Return a copy where the rows ``ids`` carry ``labels``."""
        new = np.array(self.labels)
        new[self.rows(ids)] = np.asarray(labels, dtype=np.int64)
        return replace(self, labels=new)


def validate_dataset(ds: Dataset) -> None:
    """Raise :class:`ValidationError` unless every dataset invariant holds."""
    X = ds.features
    n = len(ds.labels)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValidationError("features must be an n x d matrix with d >= 1", "BAD_SHAPE")
    if X.shape[0] != n or ds.domains.shape != (n,) or ds.ids.shape != (n,):
        raise ValidationError(
            f"row count mismatch: features {X.shape[0]}, labels {n}, "
            f"domains {ds.domains.shape[0]}, ids {ds.ids.shape[0]}",
            "BAD_SHAPE",
        )
    if ds.n_source_domains < 1 or ds.n_classes < 2:
        raise ValidationError("need K >= 1 source domains and C >= 2 classes", "BAD_SHAPE")
    if len(np.unique(ds.ids)) != n:
        raise ValidationError("sample ids must be unique", "BAD_SHAPE")
    if np.any(ds.domains < 0) or np.any(ds.domains > ds.n_source_domains):
        raise ValidationError(
            f"domain ids must lie in [0, {ds.n_source_domains}]", "BAD_SHAPE"
        )
    if not np.all(np.isfinite(X)):
        raise ValidationError("features contain non-finite values", "NON_FINITE")
    src = ds.source_mask
    bad = (ds.labels[src] < 0) | (ds.labels[src] >= ds.n_classes)
    if np.any(bad):
        first = int(ds.ids[src][np.argmax(bad)])
        raise ValidationError(f"source sample {first} has no valid label", "INVALID_LABEL")
    tgt = ds.labels[~src]
    if np.any((tgt != UNLABELED) & ((tgt < 0) | (tgt >= ds.n_classes))):
        raise ValidationError("target label out of range", "INVALID_LABEL")


@dataclass(frozen=True, eq=False)
class ModelState:
    """Parameters of a softmax classifier with an optional ReLU hidden layer.

    ``last_weights`` has shape ``(h, C)`` where ``h`` is the hidden width, or
    the input width when there is no hidden layer; column ``c`` holds the
    weights feeding logit ``c``.
    """

    last_weights: np.ndarray
    last_bias: np.ndarray
    hidden_weights: Optional[np.ndarray] = None
    hidden_bias: Optional[np.ndarray] = None
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "last_weights", _frozen(self.last_weights, np.float64))
        object.__setattr__(self, "last_bias", _frozen(self.last_bias, np.float64))
        if self.hidden_weights is not None:
            object.__setattr__(self, "hidden_weights", _frozen(self.hidden_weights, np.float64))
            hb = np.zeros(self.hidden_weights.shape[1]) if self.hidden_bias is None else self.hidden_bias
            object.__setattr__(self, "hidden_bias", _frozen(hb, np.float64))
        self.check()

    def check(self):
        W, b = self.last_weights, self.last_bias
        if W.ndim != 2 or b.shape != (W.shape[1],):
            raise ValidationError("last layer shapes inconsistent", "SHAPE_MISMATCH")
        if self.hidden_weights is not None:
            H, hb = self.hidden_weights, self.hidden_bias
            if H.ndim != 2 or hb.shape != (H.shape[1],) or H.shape[1] != W.shape[0]:
                raise ValidationError("hidden layer shapes inconsistent", "SHAPE_MISMATCH")
        if self.activation != "relu":
            raise ValidationError(f"unsupported activation {self.activation!r}", "SHAPE_MISMATCH")
        for p in self.parameters():
            if not np.all(np.isfinite(p)):
                raise ValidationError("model parameters contain non-finite values", "NON_FINITE")

    @classmethod
    def initialize(cls, n_features, n_classes, hidden_dim=0, seed=0, scale=None):
        """He-style random initialization; zero biases."""
        rng = np.random.default_rng(seed)
        if hidden_dim:
            H = rng.normal(0.0, math.sqrt(2.0 / n_features), (n_features, hidden_dim))
            W = rng.normal(0.0, math.sqrt(1.0 / hidden_dim) if scale is None else scale,
                           (hidden_dim, n_classes))
            return cls(W, np.zeros(n_classes), H, np.zeros(hidden_dim))
        W = rng.normal(0.0, 0.01 if scale is None else scale, (n_features, n_classes))
        return cls(W, np.zeros(n_classes))

    @property
    def n_features(self) -> int:
        if self.hidden_weights is not None:
            return self.hidden_weights.shape[0]
        return self.last_weights.shape[0]

    @property
    def n_classes(self) -> int:
        return self.last_weights.shape[1]

    @property
    def hidden_dim(self) -> int:
        return 0 if self.hidden_weights is None else self.hidden_weights.shape[1]

    def parameters(self) -> list:
        out = [self.last_weights, self.last_bias]
        if self.hidden_weights is not None:
            out += [self.hidden_weights, self.hidden_bias]
        return out

    def __eq__(self, other):
        if not isinstance(other, ModelState):
            return NotImplemented
        a, b = self.parameters(), other.parameters()
        return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))

    __hash__ = None


@dataclass(frozen=True)
class SelectionConfig:
    """Knobs of one GALA run. Defaults are the best-performing setting."""

    budget_per_round: int = 4
    rounds: int = 5
    alpha_percent: float = 60.0
    epsilon: float = 1e-5
    distance_mode: str = "standardized"
    aggregation_mode: str = "minimum"
    global_embedding: str = "gradient"
    local_embedding: str = "feature"
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-6
    rng_seed: int = 0

    def __post_init__(self):
        if int(self.budget_per_round) < 1:
            raise ConfigError("budget_per_round must be >= 1")
        if int(self.rounds) < 1:
            raise ConfigError("rounds must be >= 1")
        if not (0.0 < float(self.alpha_percent) <= 100.0):
            raise ConfigError("alpha_percent must lie in (0, 100]")
        if not (float(self.epsilon) > 0.0):
            raise ConfigError("epsilon must be > 0")
        if self.distance_mode not in DISTANCE_MODES:
            raise ConfigError(f"distance_mode must be one of {DISTANCE_MODES}")
        if self.aggregation_mode not in AGGREGATION_MODES:
            raise ConfigError(f"aggregation_mode must be one of {AGGREGATION_MODES}")
        for name in ("global_embedding", "local_embedding"):
            if getattr(self, name) not in EMBEDDING_MODES:
                raise ConfigError(f"{name} must be one of {EMBEDDING_MODES}")
        if int(self.kmeans_max_iters) < 1 or not (float(self.kmeans_tol) >= 0.0):
            raise ConfigError("kmeans_max_iters must be >= 1 and kmeans_tol >= 0")

    @property
    def total_budget(self) -> int:
        return int(self.budget_per_round) * int(self.rounds)

    def check_budget(self, n_target: int) -> None:
        if self.total_budget > n_target:
            raise ConfigError(
                f"rounds x budget = {self.total_budget} exceeds {n_target} target samples",
                "INSUFFICIENT_BUDGETABLE_SAMPLES",
            )


@dataclass(frozen=True)
class LabeledPool:
    """Target ids annotated so far and those still unlabeled."""

    selected_ids: tuple = field(default_factory=tuple)
    remaining_ids: tuple = field(default_factory=tuple)

    def __post_init__(self):
        sel = tuple(int(i) for i in self.selected_ids)
        rem = tuple(int(i) for i in self.remaining_ids)
        if set(sel) & set(rem):
            raise ValidationError("selected and remaining ids overlap", "BAD_ID")
        if len(set(sel)) != len(sel) or len(set(rem)) != len(rem):
            raise ValidationError("duplicate ids in pool", "BAD_ID")
        object.__setattr__(self, "selected_ids", sel)
        object.__setattr__(self, "remaining_ids", rem)

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "LabeledPool":
        return cls((), tuple(ds.target_ids.tolist()))

    def add(self, ids: Iterable[int]) -> "LabeledPool":
        """Move ``ids`` from remaining to selected, preserving order."""
        ids = [int(i) for i in ids]
        chosen = set(ids)
        missing = chosen.difference(self.remaining_ids)
        if missing:
            raise ValidationError(f"ids not in remaining pool: {sorted(missing)[:5]}", "BAD_ID")
        if len(chosen) != len(ids):
            raise ValidationError("duplicate ids in selection", "BAD_ID")
        rem = tuple(i for i in self.remaining_ids if i not in chosen)
        return LabeledPool(self.selected_ids + tuple(ids), rem)

    def covers(self, ds: Dataset) -> bool:
        """True if selected and remaining partition the target ids of ``ds``."""
        return sorted(self.selected_ids + self.remaining_ids) == sorted(ds.target_ids.tolist())
