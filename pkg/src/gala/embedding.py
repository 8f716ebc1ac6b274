"""Forward passes, pseudo-labels and pseudo-label gradient embeddings.

For a sample with penultimate representation ``M`` and softmax output ``p``,
the cross-entropy gradient with respect to the last-layer weights of the
pseudo-label class ``y_hat = argmax p`` is ``M * (p_yhat - 1)``. We store the
negated vector ``M * (1 - p_yhat)``; its norm serves as the uncertainty score.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._validation import check_matrix
from .exceptions import ValidationError
from .types import Dataset, ModelState


def softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def features_of(model: ModelState, X):
    """Penultimate representation: ReLU hidden activations, or ``X`` itself."""
    if model.hidden_weights is None:
        return X
    return np.maximum(X @ model.hidden_weights + model.hidden_bias, 0.0)


def forward(model: ModelState, x):
    """Return ``(feature, probs)`` for one row or a matrix of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = check_matrix(x.reshape(1, -1) if single else x, n_features=model.n_features,
                     name="x", code="SHAPE_MISMATCH")
    M = features_of(model, X)
    P = softmax(M @ model.last_weights + model.last_bias)
    if single:
        return M[0], P[0]
    return M, P


@dataclass(frozen=True)
class EmbeddingBundle:
    feature: np.ndarray
    probs: np.ndarray
    pseudo_label: int
    grad_embed: np.ndarray
    uncertainty: float


def gradient_embedding(feature, probs) -> EmbeddingBundle:
    """Pseudo-label gradient embedding of a single sample.

    >>> b = gradient_embedding([1.0, 2.0], [0.5, 0.5])
    >>> b.pseudo_label, b.grad_embed.tolist()
    (0, [0.5, 1.0])
    """
    feature = np.asarray(feature, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if feature.ndim != 1 or feature.size == 0:
        raise ValidationError("feature must be a non-empty vector", "EMPTY_FEATURE")
    if probs.ndim != 1 or probs.size < 1:
        raise ValidationError("probs must be a non-empty vector", "SHAPE_MISMATCH")
    batch = EmbeddingBatch.from_arrays(feature[None, :], probs[None, :])
    return batch[0]


class EmbeddingBatch(Sequence):
    """Column-stored embeddings for many samples.

    Behaves as a read-only sequence of :class:`EmbeddingBundle`, while the
    selection code works directly on the stacked arrays.
    """

    def __init__(self, features, probs, ids=None):
        self.features = np.asarray(features, dtype=np.float64)
        self.probs = np.asarray(probs, dtype=np.float64)
        n = self.features.shape[0]
        self.ids = np.arange(n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
        # argmax returns the first maximum, i.e. the lowest class index on ties
        self.pseudo_labels = np.argmax(self.probs, axis=1) if n else np.zeros(0, np.int64)
        top = self.probs[np.arange(n), self.pseudo_labels] if n else np.zeros(0)
        self.grad_embeds = self.features * (1.0 - top)[:, None]
        self.uncertainty = np.sqrt(np.sum(self.grad_embeds ** 2, axis=1))

    @classmethod
    def from_arrays(cls, features, probs, ids=None):
        return cls(features, probs, ids)

    def __len__(self):
        return self.features.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            idx = np.arange(len(self))[i]
            return self.take(idx)
        return EmbeddingBundle(
            feature=self.features[i],
            probs=self.probs[i],
            pseudo_label=int(self.pseudo_labels[i]),
            grad_embed=self.grad_embeds[i],
            uncertainty=float(self.uncertainty[i]),
        )

    def take(self, idx) -> "EmbeddingBatch":
        idx = np.asarray(idx, dtype=np.int64)
        return EmbeddingBatch(self.features[idx], self.probs[idx], self.ids[idx])

    def space(self, mode: str) -> np.ndarray:
        """Vectors of the requested embedding space (``gradient`` or ``feature``)."""
        if mode == "gradient":
            return self.grad_embeds
        if mode == "feature":
            return self.features
        raise ValidationError(f"unknown embedding mode {mode!r}", "BAD_CONFIG")


def embed_all(model: ModelState, ds: Dataset, ids) -> EmbeddingBatch:
    """Embed the rows of ``ds`` with the given ids, preserving order."""
    ids = np.asarray(list(ids), dtype=np.int64)
    if ids.size == 0:
        h = model.last_weights.shape[0]
        return EmbeddingBatch(np.zeros((0, h)), np.zeros((0, model.n_classes)), ids)
    rows = ds.rows(ids)
    M, P = forward(model, ds.features[rows])
    return EmbeddingBatch(M, P, ids)
