"""Perturbation sets (L2 / Linf balls), projections onto them, and pixel-range clamping.

All norms are computed in double precision regardless of the storage dtype of
the perturbation, so the radial scale factor is stable for float32 image data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .util import ensure_finite

NORMS = ("l2", "linf")


@dataclass(frozen=True)
class PixelRange:
    """Valid pixel interval [lo, hi] for every image in a pipeline."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError("pixel range bounds must be finite")
        if not self.lo < self.hi:
            raise ValueError(f"pixel range requires lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def span(self) -> float:
        return self.hi - self.lo

    def to_json(self):
        return [self.lo, self.hi]

    @classmethod
    def from_json(cls, obj) -> "PixelRange":
        lo, hi = obj
        return cls(float(lo), float(hi))


@dataclass(frozen=True)
class ThreatModel:
    """Allowed perturbation set: a norm ball of radius epsilon around the input."""

    norm: str
    epsilon: float

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}; expected one of {NORMS}")
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise ValueError(f"epsilon must be a nonnegative real, got {self.epsilon}")

    def project(self, delta: np.ndarray) -> np.ndarray:
        if self.norm == "l2":
            return project_l2(delta, self.epsilon)
        return project_linf(delta, self.epsilon)

    def project_batch(self, delta: np.ndarray) -> np.ndarray:
        if self.norm == "l2":
            return project_l2_batch(delta, self.epsilon)
        return project_linf(delta, self.epsilon)

    def to_json(self):
        return {"norm": self.norm, "epsilon": self.epsilon}

    @classmethod
    def from_json(cls, obj) -> "ThreatModel":
        return cls(str(obj["norm"]), float(obj["epsilon"]))


def l2_norm(delta: np.ndarray) -> float:
    """Euclidean norm of the whole array, accumulated in float64."""
    return float(np.linalg.norm(np.asarray(delta, dtype=np.float64).ravel()))


def l2_norm_batch(delta: np.ndarray) -> np.ndarray:
    """Per-item Euclidean norm over all trailing axes, accumulated in float64."""
    flat = np.asarray(delta, dtype=np.float64).reshape(delta.shape[0], -1)
    return np.linalg.norm(flat, axis=1)


def project_l2(delta: np.ndarray, epsilon: float) -> np.ndarray:
    """Project a single perturbation onto the L2 ball of radius epsilon.

    Points inside the ball are returned unchanged (bitwise); points outside are
    radially scaled onto the sphere. epsilon = 0 returns exact zeros.
    """
    delta = np.asarray(delta)
    ensure_finite(delta, "delta")
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    if epsilon == 0:
        return np.zeros_like(delta)
    norm = l2_norm(delta)
    if norm <= epsilon:
        return delta.copy()
    scale = np.asarray(epsilon / norm, dtype=np.float64)
    return (delta * scale).astype(delta.dtype, copy=False)


def project_l2_batch(delta: np.ndarray, epsilon: float) -> np.ndarray:
    """Per-item L2 projection of a batch of perturbations (leading axis indexes items)."""
    delta = np.asarray(delta)
    ensure_finite(delta, "delta")
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    if epsilon == 0:
        return np.zeros_like(delta)
    norms = l2_norm_batch(delta)
    scale = np.ones_like(norms)
    outside = norms > epsilon
    scale[outside] = epsilon / norms[outside]
    shape = (delta.shape[0],) + (1,) * (delta.ndim - 1)
    out = delta * scale.reshape(shape)
    # keep interior points bitwise intact
    out[~outside] = delta[~outside]
    return out.astype(delta.dtype, copy=False)


def project_linf(delta: np.ndarray, epsilon: float) -> np.ndarray:
    """Clamp every coordinate of the perturbation to [-epsilon, +epsilon]."""
    delta = np.asarray(delta)
    ensure_finite(delta, "delta")
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    if epsilon == 0:
        return np.zeros_like(delta)
    return np.clip(delta, -epsilon, epsilon)


def clamp_to_range(x: np.ndarray, pixel_range: PixelRange) -> np.ndarray:
    """Clip every pixel into [lo, hi]; pixels already inside are unchanged."""
    x = np.asarray(x)
    ensure_finite(x, "image")
    return np.clip(x, pixel_range.lo, pixel_range.hi)
