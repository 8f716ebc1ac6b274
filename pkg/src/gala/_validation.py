"""Input validation helpers shared by the estimators and functional APIs."""

import numbers

import numpy as np

from .exceptions import ValidationError


def check_matrix(X, n_features=None, name="X", code="BAD_SHAPE", allow_empty=False):
    """Return ``X`` as a finite float64 2-D array or raise ``ValidationError``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {X.shape}", code)
    if not allow_empty and X.shape[0] == 0:
        raise ValidationError(f"{name} is empty", code)
    if n_features is not None and X.shape[1] != n_features:
        raise ValidationError(
            f"{name} has {X.shape[1]} columns, expected {n_features}", code
        )
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{name} contains non-finite values", "NON_FINITE")
    return X


def check_vector(v, name="v", code="DIM_MISMATCH"):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError(f"{name} must be a non-empty vector", code)
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} contains non-finite values", "NON_FINITE")
    return v


def check_positive_int(value, name):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool) or value < 1:
        raise ValidationError(f"{name} must be a positive integer, got {value!r}", "BAD_CONFIG")
    return int(value)


def check_probabilities(P, n_classes=None, atol=1e-6):
    P = check_matrix(P, n_features=n_classes, name="probs", code="SCHEMA")
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > atol):
        raise ValidationError("probability rows must be nonnegative and sum to 1", "SCHEMA")
    return P
