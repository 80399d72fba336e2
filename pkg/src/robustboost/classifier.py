"""Uniform classifier interface: logits, input-space loss gradients, multi-scale
features, checkpoint persistence, and a finite-difference gradient verifier.

A ClassifierHandle owns the normalization applied before the network, so every
gradient returned here is with respect to raw pixels and every epsilon in the
pipeline is in raw pixel units.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import models
from .layers import Model
from .threat import PixelRange, ThreatModel
from .util import ensure_finite, read_json, sha256_arrays, softmax, write_json

CHECKPOINT_PARAMS = "params.npz"
CHECKPOINT_SIDECAR = "handle.json"
RANGE_SLACK = 1e-6


@dataclass
class FeatureStack:
    """Ordered feature arrays, one per requested scale."""

    scales: tuple[str, ...]
    features: list[np.ndarray]

    def __post_init__(self):
        if len(self.scales) < 1 or len(self.scales) != len(self.features):
            raise ValueError("feature stack needs one array per scale, at least one scale")
        for name, f in zip(self.scales, self.features):
            ensure_finite(f, f"feature {name!r}")


@dataclass
class ClassifierHandle:
    """Immutable facade over a trained model plus its I/O contract.

    normalization is a (mean, std) pair broadcastable over a single image;
    inputs are standardized before the network and gradients are chained back
    through it, so callers only ever see raw-pixel space.
    """

    model: Model
    architecture: dict
    pixel_range: PixelRange
    normalization: tuple[np.ndarray, np.ndarray]
    training_threat_model: ThreatModel | None = None
    scales: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.scales:
            self.scales = models.scales_for(self.architecture)

    @property
    def class_count(self) -> int:
        return int(self.architecture["class_count"])

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.architecture["input_shape"])

    def as_dtype(self, dtype) -> "ClassifierHandle":
        return ClassifierHandle(
            model=self.model.astype(dtype),
            architecture=self.architecture,
            pixel_range=self.pixel_range,
            normalization=self.normalization,
            training_threat_model=self.training_threat_model,
            scales=self.scales,
        )


def _as_images(x) -> np.ndarray:
    return np.asarray(getattr(x, "images", x))


def _validate_input(clf: ClassifierHandle, x: np.ndarray) -> np.ndarray:
    if x.ndim == len(clf.input_shape):
        x = x[None]
    if tuple(x.shape[1:]) != clf.input_shape:
        raise ValueError(f"input shape mismatch: expected (batch,)+{clf.input_shape}, got {x.shape}")
    ensure_finite(x, "input batch")
    lo, hi = clf.pixel_range.lo, clf.pixel_range.hi
    slack = RANGE_SLACK * clf.pixel_range.span
    xmin, xmax = float(x.min()), float(x.max())
    if xmin < lo - slack or xmax > hi + slack:
        raise ValueError(
            f"input range mismatch: expected values in [{lo}, {hi}], got [{xmin:.6g}, {xmax:.6g}]"
        )
    return x


def _normalize(clf: ClassifierHandle, x: np.ndarray) -> np.ndarray:
    mean, std = clf.normalization
    u = (x - mean) / std
    return np.ascontiguousarray(u, dtype=clf.model.dtype)


def predict_logits(clf: ClassifierHandle, x) -> np.ndarray:
    """Logit matrix (batch, class_count) for a batch of images."""
    x = _validate_input(clf, _as_images(x))
    y, _, _ = clf.model.forward(_normalize(clf, x))
    ensure_finite(y, "logits")
    return y


def loss_and_grad(clf: ClassifierHandle, x: np.ndarray, y, want_grad: bool = True):
    """Per-image cross-entropy against y, plus its gradient w.r.t. raw pixels.

    Returns (loss (batch,), grad or None). The loss is accumulated in float64.
    """
    x = _validate_input(clf, _as_images(x))
    n = x.shape[0]
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), (n,))
    if y.min() < 0 or y.max() >= clf.class_count:
        raise ValueError(f"class index out of range [0, {clf.class_count}): {y.min()}..{y.max()}")
    logits, ctxs, _ = clf.model.forward(_normalize(clf, x), need_ctx=want_grad)
    z = np.asarray(logits, dtype=np.float64)
    zmax = z.max(axis=1)
    lse = zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))
    loss = lse - z[np.arange(n), y]
    if not want_grad:
        return loss, None
    p = np.exp(z - lse[:, None])
    gy = p.copy()
    gy[np.arange(n), y] -= 1.0
    gu = clf.model.backward(ctxs, gy.astype(clf.model.dtype), need_param_grad=False, check_finite=True)
    _, std = clf.normalization
    return loss, (gu / std).reshape(x.shape)


def input_gradient(clf: ClassifierHandle, x, y) -> np.ndarray:
    """Gradient of the classification loss w.r.t. the input image(s)."""
    x_arr = _as_images(x)
    single = x_arr.ndim == len(clf.input_shape)
    _, g = loss_and_grad(clf, x_arr, y, want_grad=True)
    return g[0] if single else g


def extract_features(clf: ClassifierHandle, x, scales=None) -> FeatureStack:
    """Feature arrays at the requested scales, in the requested order."""
    if scales is None:
        scales = clf.scales
    scales = tuple(scales)
    unknown = [s for s in scales if s not in clf.scales]
    if unknown:
        raise ValueError(f"unknown scale(s) {unknown}; available: {list(clf.scales)}")
    x = _validate_input(clf, _as_images(x))
    _, _, tapped = clf.model.forward(_normalize(clf, x), collect=scales)
    return FeatureStack(scales=scales, features=[tapped[s] for s in scales])


def check_gradients(clf: ClassifierHandle, trials: int = 20, tolerance: float = 1e-4,
                    seed: int = 0, coords_per_trial: int = 25, step: float = 1e-5) -> dict:
    """Compare analytic input gradients against central finite differences.

    Runs on a float64 copy of the classifier. Each trial draws a random in-range
    input and class, then differences the loss along a random subset of input
    coordinates. Failure is a report outcome, not an exception.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    clf64 = clf.as_dtype(np.float64)
    rng = np.random.default_rng(seed)
    lo, hi = clf64.pixel_range.lo, clf64.pixel_range.hi
    size = int(np.prod(clf64.input_shape))
    n_coords = min(coords_per_trial, size)
    errors = []
    for _ in range(trials):
        x = rng.uniform(lo, hi, size=(1,) + clf64.input_shape)
        # keep the finite-difference stencil inside the valid range
        x = np.clip(x, lo + 2 * step, hi - 2 * step)
        y = int(rng.integers(clf64.class_count))
        _, g = loss_and_grad(clf64, x, y)
        g = g.reshape(-1)
        coords = rng.choice(size, size=n_coords, replace=False)
        fd = np.empty(n_coords)
        for i, c in enumerate(coords):
            xp = x.reshape(-1).copy()
            xp[c] += step
            lp, _ = loss_and_grad(clf64, xp.reshape(x.shape), y, want_grad=False)
            xp[c] -= 2 * step
            lm, _ = loss_and_grad(clf64, xp.reshape(x.shape), y, want_grad=False)
            fd[i] = (lp[0] - lm[0]) / (2 * step)
        an = g[coords]
        denom = max(np.linalg.norm(an), np.linalg.norm(fd), 1e-12)
        errors.append(float(np.linalg.norm(an - fd) / denom))
    max_err = max(errors)
    return {
        "trials": trials,
        "coords_per_trial": n_coords,
        "step": step,
        "tolerance": tolerance,
        "max_relative_error": max_err,
        "per_trial_error": errors,
        "passed": bool(max_err < tolerance),
    }


def fingerprint(clf: ClassifierHandle) -> str:
    """Content hash of parameters plus contract metadata (file-format independent)."""
    meta = _sidecar_dict(clf)
    params = [p.value for p in clf.model.params()]
    return sha256_arrays(np.frombuffer(repr(sorted(meta.items())).encode(), dtype=np.uint8), *params)


def _sidecar_dict(clf: ClassifierHandle) -> dict:
    mean, std = clf.normalization
    return {
        "format_version": 1,
        "architecture": clf.architecture,
        "class_count": clf.class_count,
        "pixel_range": clf.pixel_range.to_json(),
        "normalization": {
            "mean": np.asarray(mean).tolist(),
            "std": np.asarray(std).tolist(),
        },
        "scales": list(clf.scales),
        "training_threat_model": (
            clf.training_threat_model.to_json() if clf.training_threat_model else None
        ),
        "dtype": str(clf.model.dtype),
    }


def save_checkpoint(clf: ClassifierHandle, directory: str) -> str:
    """Persist params.npz + handle.json under directory; returns the fingerprint."""
    os.makedirs(directory, exist_ok=True)
    params = {f"param_{i:03d}": p.value for i, p in enumerate(clf.model.params())}
    np.savez(os.path.join(directory, CHECKPOINT_PARAMS), **params)
    write_json(os.path.join(directory, CHECKPOINT_SIDECAR), _sidecar_dict(clf))
    return fingerprint(clf)


def load_checkpoint(directory: str) -> ClassifierHandle:
    sidecar = read_json(os.path.join(directory, CHECKPOINT_SIDECAR))
    if sidecar.get("format_version") != 1:
        raise ValueError(f"unsupported checkpoint format_version {sidecar.get('format_version')}")
    dtype = np.dtype(sidecar["dtype"])
    model = models.build_model(sidecar["architecture"], seed=0, dtype=dtype)
    with np.load(os.path.join(directory, CHECKPOINT_PARAMS)) as data:
        state = [data[k] for k in sorted(data.files)]
    model.set_state(state)
    norm = sidecar["normalization"]
    ttm = sidecar.get("training_threat_model")
    return ClassifierHandle(
        model=model,
        architecture=sidecar["architecture"],
        pixel_range=PixelRange.from_json(sidecar["pixel_range"]),
        normalization=(np.asarray(norm["mean"]), np.asarray(norm["std"])),
        training_threat_model=ThreatModel.from_json(ttm) if ttm else None,
        scales=tuple(sidecar["scales"]),
    )
