"""Mini-batch SGD with momentum for the softmax classifier.

The objective is ``mean CE(labeled source) + w * mean CE(selected target)``.
Each epoch shuffles the source rows into batches with a generator keyed on
``(seed, epoch)``; the selected target rows are shuffled by an independent
stream and spread over the same batches, so the source schedule never
depends on the target pool.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix
from .embedding import features_of, forward, softmax
from .exceptions import ConfigError, ValidationError
from .types import UNLABELED, Dataset, LabeledPool, ModelState


def even_schedule(epochs, rounds, first=None):
    """Active epochs spaced evenly; by default the last round leaves room to keep training."""
    if rounds < 1:
        return ()
    first = max(1, epochs // 2) if first is None else first
    step = max(1, (epochs - first) // (rounds + 1)) if rounds > 1 else 1
    return tuple(first + i * step for i in range(rounds))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    active_epochs: tuple = (10, 12, 14, 16, 18)
    learning_rate: float = 0.05
    momentum: float = 0.95
    batch_size: int = 64
    hidden_dim: int = 0
    target_loss_weight: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "active_epochs", tuple(int(e) for e in self.active_epochs))
        ae = self.active_epochs
        if self.epochs < 0 or self.batch_size < 1 or self.hidden_dim < 0:
            raise ConfigError("epochs >= 0, batch_size >= 1 and hidden_dim >= 0 required")
        if not self.learning_rate > 0 or not (0 <= self.momentum < 1):
            raise ConfigError("learning_rate must be > 0 and momentum in [0, 1)")
        if self.target_loss_weight < 0:
            raise ConfigError("target_loss_weight must be >= 0")
        if any(b <= a for a, b in zip(ae, ae[1:])) or any(e < 0 or e >= self.epochs for e in ae):
            raise ConfigError(
                f"active_epochs {ae} must be strictly increasing and within [0, {self.epochs})")

    @property
    def rounds(self) -> int:
        return len(self.active_epochs)


def _ce_grads(model: ModelState, X, y, need_grad=True):
    """Summed cross-entropy over rows and its gradient for every parameter."""
    if model.hidden_weights is not None:
        pre = X @ model.hidden_weights + model.hidden_bias
        M = np.maximum(pre, 0.0)
    else:
        M = X
    logits = M @ model.last_weights + model.last_bias
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.sum(lse - z[np.arange(len(y)), y]))
    if not need_grad:
        return loss, None
    d = softmax(logits)
    d[np.arange(len(y)), y] -= 1.0
    grads = [M.T @ d, d.sum(axis=0)]
    if model.hidden_weights is not None:
        dpre = (d @ model.last_weights.T) * (pre > 0)
        grads += [X.T @ dpre, dpre.sum(axis=0)]
    return loss, grads


def _with_params(model: ModelState, params) -> ModelState:
    if model.hidden_weights is None:
        return ModelState(params[0], params[1])
    return ModelState(params[0], params[1], params[2], params[3])


def _training_rows(ds: Dataset, pool: LabeledPool):
    src = np.flatnonzero(ds.source_mask)
    tgt = ds.rows(pool.selected_ids) if pool.selected_ids else np.zeros(0, np.int64)
    if np.any(ds.labels[tgt] == UNLABELED):
        raise ValidationError("selected target rows must carry annotated labels", "INVALID_LABEL")
    if src.size == 0 and tgt.size == 0:
        raise ValidationError("nothing labeled to train on", "NO_LABELED_DATA")
    return src, tgt


def training_loss(model: ModelState, ds: Dataset, pool: LabeledPool, target_loss_weight=1.0,
                  need_grad=False):
    """Full-data objective (and optionally its gradient)."""
    src, tgt = _training_rows(ds, pool)
    total, grads = 0.0, None
    for rows, w in ((src, 1.0), (tgt, target_loss_weight)):
        if rows.size == 0:
            continue
        loss, g = _ce_grads(model, ds.features[rows], ds.labels[rows], need_grad)
        scale = w / rows.size
        total += scale * loss
        if need_grad:
            g = [scale * gi for gi in g]
            grads = g if grads is None else [a + b for a, b in zip(grads, g)]
    return (total, grads) if need_grad else total


def _epoch_batches(n_src, n_tgt, batch_size, seed, epoch):
    rng_s = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(epoch), 0])
    rng_t = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(epoch), 1])
    base = n_src if n_src else n_tgt
    n_batches = max(1, math.ceil(base / batch_size))
    src_batches = np.array_split(rng_s.permutation(n_src), n_batches)
    tgt_batches = np.array_split(rng_t.permutation(n_tgt), n_batches)
    return n_batches, list(zip(src_batches, tgt_batches))


def train_epochs(model: ModelState, ds: Dataset, pool: LabeledPool, cfg: TrainConfig,
                 from_epoch: int, to_epoch: int, return_losses=False):
    """Run epochs ``from_epoch, ..., to_epoch - 1`` and return the updated model.

    Momentum starts from zero at every call. With ``return_losses`` the mean
    per-batch objective of each epoch is returned as well.
    """
    src, tgt = _training_rows(ds, pool)
    X, y = ds.features, ds.labels
    params = [np.array(p) for p in model.parameters()]
    velocity = [np.zeros_like(p) for p in params]
    lr, mu, w = cfg.learning_rate, cfg.momentum, cfg.target_loss_weight
    losses = []
    for epoch in range(from_epoch, to_epoch):
        n_batches, batches = _epoch_batches(src.size, tgt.size, cfg.batch_size, cfg.rng_seed, epoch)
        epoch_loss = 0.0
        for sb, tb in batches:
            current = _with_params(model, params)
            grads = [np.zeros_like(p) for p in params]
            batch_loss = 0.0
            if sb.size:
                rows = src[sb]
                loss, g = _ce_grads(current, X[rows], y[rows])
                scale = n_batches / src.size
                batch_loss += scale * loss
                grads = [a + scale * b for a, b in zip(grads, g)]
            if tb.size and w != 0.0:
                rows = tgt[tb]
                loss, g = _ce_grads(current, X[rows], y[rows])
                scale = w * n_batches / tgt.size
                batch_loss += scale * loss
                grads = [a + scale * b for a, b in zip(grads, g)]
            for p, v, g in zip(params, velocity, grads):
                v *= mu
                v += g
                p -= lr * v
            epoch_loss += batch_loss
        losses.append(epoch_loss / n_batches)
    out = _with_params(model, params)
    return (out, losses) if return_losses else out


def evaluate(model: ModelState, ds: Dataset, domain: int,
             answer_key: Optional[Mapping[int, int]] = None) -> float:
    """Accuracy of argmax predictions on the rows of ``domain`` with known ground truth."""
    rows = np.flatnonzero(ds.domains == domain)
    truth = np.array(ds.labels[rows])
    if answer_key is not None:
        truth = np.array([answer_key.get(int(i), int(t)) for i, t in zip(ds.ids[rows], truth)],
                         dtype=np.int64)
    known = truth != UNLABELED
    if not np.any(known):
        raise ValidationError(f"no evaluable rows in domain {domain}", "EMPTY_DOMAIN")
    _, P = forward(model, ds.features[rows[known]])
    return float(np.mean(np.argmax(P, axis=1) == truth[known]))


class SoftmaxNetClassifier(ClassifierMixin, BaseEstimator):
    """Softmax regression (optionally with one ReLU hidden layer) trained by momentum SGD.

    ``transform`` returns the penultimate representation, i.e. the feature map
    used for embeddings.
    """

    def __init__(self, hidden_dim=0, epochs=30, learning_rate=0.05, momentum=0.95,
                 batch_size=64, random_state=0):
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X = check_matrix(X)
        self.classes_, codes = np.unique(np.asarray(y), return_inverse=True)
        if self.classes_.size < 2:
            raise ValidationError("need at least two classes", "BAD_SHAPE")
        ds = Dataset(X, codes, np.zeros(len(codes)), self.classes_.size, 1)
        cfg = TrainConfig(epochs=self.epochs, active_epochs=(), learning_rate=self.learning_rate,
                          momentum=self.momentum, batch_size=self.batch_size,
                          hidden_dim=self.hidden_dim, rng_seed=self.random_state)
        init = ModelState.initialize(X.shape[1], self.classes_.size, self.hidden_dim,
                                     seed=self.random_state)
        self.model_ = train_epochs(init, ds, LabeledPool(), cfg, 0, self.epochs)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self)
        X = check_matrix(X, n_features=self.n_features_in_)
        return forward(self.model_, X)[1]

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def transform(self, X):
        check_is_fitted(self)
        return features_of(self.model_, check_matrix(X, n_features=self.n_features_in_))
