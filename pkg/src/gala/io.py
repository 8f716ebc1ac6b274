"""Readers and writers for the on-disk formats.

Features CSV: ``id,domain,label,f0,...,f{d-1}`` with ``label = -1`` for
unlabeled rows. Floats are written with ``repr`` so parsing restores the
exact bits. Answer keys are ``id,label``; probability files ``id,p0,...``.
Model checkpoints are versioned JSON.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .exceptions import SchemaError
from .types import Dataset, ModelState

CHECKPOINT_FORMAT = "gala-model"
CHECKPOINT_VERSION = 1


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    return repr(float(x))


def dataset_to_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "domain", "label"] + [f"f{j}" for j in range(ds.n_features)])
    for i, dom, lab, row in zip(ds.ids, ds.domains, ds.labels, ds.features):
        w.writerow([int(i), int(dom), int(lab)] + [_fmt(v) for v in row])
    return buf.getvalue()


def write_features_csv(ds: Dataset, path) -> None:
    atomic_write_text(path, dataset_to_csv(ds))


def _read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    return rows[0], rows[1:]


def read_features_csv(path, n_classes=None, n_source_domains=None) -> Dataset:
    """Parse a features CSV.

    ``n_source_domains`` defaults to the largest domain id (the target domain)
    and ``n_classes`` to one more than the largest label.
    """
    header, body = _read_rows(path)
    if header[:3] != ["id", "domain", "label"] or len(header) < 4:
        raise SchemaError(f"{path}: header must start with id,domain,label,f0")
    d = len(header) - 3
    if header[3:] != [f"f{j}" for j in range(d)]:
        raise SchemaError(f"{path}: feature columns must be named f0..f{d - 1}")
    ids, doms, labs, feats = [], [], [], []
    for lineno, row in enumerate(body, start=2):
        if len(row) != d + 3:
            raise SchemaError(f"{path}:{lineno}: expected {d + 3} fields, got {len(row)}")
        try:
            ids.append(int(row[0]))
            doms.append(int(row[1]))
            labs.append(int(row[2]))
            feats.append([float(v) for v in row[3:]])
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from None
    if not ids:
        raise SchemaError(f"{path}: no data rows")
    labs_arr = np.array(labs, dtype=np.int64)
    K = max(doms) if n_source_domains is None else int(n_source_domains)
    C = int(max(2, labs_arr.max() + 1)) if n_classes is None else int(n_classes)
    return Dataset(np.array(feats, dtype=np.float64).reshape(len(ids), d), labs_arr,
                   np.array(doms), C, K, np.array(ids))


def write_answer_key(key: dict, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label"])
    for i in sorted(key):
        w.writerow([int(i), int(key[i])])
    atomic_write_text(path, buf.getvalue())


def read_answer_key(path) -> dict:
    header, body = _read_rows(path)
    if header != ["id", "label"]:
        raise SchemaError(f"{path}: header must be id,label")
    try:
        return {int(r[0]): int(r[1]) for r in body}
    except (ValueError, IndexError) as exc:
        raise SchemaError(f"{path}: {exc}") from None


def read_probabilities_csv(path):
    """Return ``(ids, probs)`` from an ``id,p0,...,p{C-1}`` file."""
    header, body = _read_rows(path)
    C = len(header) - 1
    if header[0] != "id" or C < 2 or header[1:] != [f"p{c}" for c in range(C)]:
        raise SchemaError(f"{path}: header must be id,p0,...,p{{C-1}}")
    try:
        ids = np.array([int(r[0]) for r in body], dtype=np.int64)
        P = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float64)
    except (ValueError, IndexError) as exc:
        raise SchemaError(f"{path}: {exc}") from None
    if P.shape != (len(ids), C):
        raise SchemaError(f"{path}: ragged rows")
    return ids, P


def write_probabilities_csv(ids, P, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id"] + [f"p{c}" for c in range(P.shape[1])])
    for i, row in zip(ids, P):
        w.writerow([int(i)] + [_fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def _encode(a):
    return {"shape": list(a.shape), "data": [float(v) for v in np.ravel(a)]}


def _decode(obj):
    return np.array(obj["data"], dtype=np.float64).reshape(obj["shape"])


def model_to_json(model: ModelState) -> str:
    params = {"last_weights": _encode(model.last_weights), "last_bias": _encode(model.last_bias)}
    if model.hidden_weights is not None:
        params["hidden_weights"] = _encode(model.hidden_weights)
        params["hidden_bias"] = _encode(model.hidden_bias)
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
           "activation": model.activation, "params": params}
    return json.dumps(doc, indent=1) + "\n"


def model_from_json(text: str) -> ModelState:
    try:
        doc = json.loads(text)
        if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
            raise SchemaError("not a version-1 gala model checkpoint")
        p = doc["params"]
        hidden = p.get("hidden_weights")
        return ModelState(_decode(p["last_weights"]), _decode(p["last_bias"]),
                          None if hidden is None else _decode(hidden),
                          None if hidden is None else _decode(p["hidden_bias"]),
                          doc.get("activation", "relu"))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"malformed checkpoint: {exc}") from None


def save_model(model: ModelState, path) -> None:
    atomic_write_text(path, model_to_json(model))


def load_model(path) -> ModelState:
    return model_from_json(Path(path).read_text())
