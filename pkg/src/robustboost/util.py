"""Shared small helpers: finiteness checks, hashing, deterministic JSON."""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np


def ensure_finite(arr: np.ndarray, name: str) -> None:
    """Raise ValueError naming the first offending flat index if arr has NaN/Inf."""
    finite = np.isfinite(arr)
    if not finite.all():
        idx = int(np.flatnonzero(~finite.ravel())[0])
        bad = arr.ravel()[idx]
        raise ValueError(f"{name} contains a non-finite entry ({bad!r}) at flat index {idx}")


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], num_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1
    return out


def sha256_arrays(*arrays: np.ndarray) -> str:
    """Content fingerprint of a sequence of arrays (shape/dtype aware)."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def json_dumps(obj) -> str:
    """Deterministic JSON encoding: sorted keys, fixed separators."""
    return json.dumps(obj, sort_keys=True, separators=(",", ": "), indent=1)


def write_json(path, obj) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        f.write(json_dumps(obj))
        f.write("\n")


def read_json(path):
    with open(path) as f:
        return json.load(f)


def chi_square_to_uniform(histogram: np.ndarray) -> float:
    """Chi-square statistic of a count histogram against the uniform distribution."""
    h = np.asarray(histogram, dtype=np.float64)
    n = h.sum()
    if n <= 0:
        raise ValueError("histogram is empty")
    expected = n / h.shape[0]
    return float(np.sum((h - expected) ** 2 / expected))
