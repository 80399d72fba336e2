"""Image batches and the built-in desk-scale dataset.

The dataset is a procedurally generated 8-class corpus of 32x32 RGB images
(filled shapes and periodic textures over random colors, soft edges, additive
noise). Geometry carries the label; color does not. Generation is fully
determined by the seed, which keeps every downstream experiment rerunnable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .threat import PixelRange
from .util import ensure_finite, sha256_arrays

SHAPE_CLASSES = ("disk", "square", "triangle", "ring", "cross", "hbars", "vbars", "checker")
DATASETS = ("shapes32",)


@dataclass
class ImageBatch:
    """A set of images in a declared pixel range, with optional labels."""

    images: np.ndarray
    pixel_range: PixelRange
    labels: np.ndarray | None = None
    source: str | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images)
        if self.images.ndim < 2:
            raise ValueError("images must be an (N, ...) array")
        ensure_finite(self.images, "images")
        lo, hi = self.pixel_range.lo, self.pixel_range.hi
        slack = 1e-6 * self.pixel_range.span
        if self.images.size and (self.images.min() < lo - slack or self.images.max() > hi + slack):
            raise ValueError(
                f"images exceed declared pixel range [{lo}, {hi}]: "
                f"[{self.images.min():.6g}, {self.images.max():.6g}]"
            )
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.images.shape[0],):
                raise ValueError(
                    f"labels must cover every image: {self.labels.shape} vs {self.images.shape[0]} images"
                )

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, idx) -> "ImageBatch":
        labels = None if self.labels is None else self.labels[idx]
        return ImageBatch(self.images[idx], self.pixel_range, labels, self.source)

    def without_labels(self) -> "ImageBatch":
        return ImageBatch(self.images, self.pixel_range, None, self.source)

    def fingerprint(self) -> str:
        arrays = [self.images]
        if self.labels is not None:
            arrays.append(self.labels)
        return sha256_arrays(*arrays)


def _soft(d: np.ndarray, width: float = 0.7) -> np.ndarray:
    """Smooth 0/1 mask from a signed distance field (positive = inside)."""
    return 1.0 / (1.0 + np.exp(-d / width))


def _shape_mask(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = size / 2 + rng.uniform(-4, 4)
    cy = size / 2 + rng.uniform(-4, 4)
    r = rng.uniform(0.19, 0.36) * size
    theta = np.deg2rad(rng.uniform(-10, 10))
    ct, st = np.cos(theta), np.sin(theta)
    dx = (xx - cx) * ct + (yy - cy) * st
    dy = -(xx - cx) * st + (yy - cy) * ct

    name = SHAPE_CLASSES[label]
    if name == "disk":
        d = r - np.hypot(dx, dy)
    elif name == "square":
        d = r * 0.9 - np.maximum(np.abs(dx), np.abs(dy))
    elif name == "triangle":
        h = 0.85 * r
        nleft = np.array([1.6 * r, r]) / np.hypot(1.6 * r, r)
        nright = np.array([-1.6 * r, r]) / np.hypot(1.6 * r, r)
        d1 = h - dy  # inside is above the base edge at dy = +h
        d2 = nleft[0] * dx + nleft[1] * (dy + h)
        d3 = nright[0] * dx + nright[1] * (dy + h)
        d = np.minimum(np.minimum(d1, d2), d3)
    elif name == "ring":
        rho = np.hypot(dx, dy)
        d = np.minimum(r - rho, rho - 0.55 * r)
    elif name == "cross":
        w = 0.38 * r
        bar_h = np.minimum(r - np.abs(dx), w - np.abs(dy))
        bar_v = np.minimum(w - np.abs(dx), r - np.abs(dy))
        d = np.maximum(bar_h, bar_v)
    elif name in ("hbars", "vbars", "checker"):
        period = rng.uniform(5.0, 9.0)
        phase_y = rng.uniform(0, period)
        phase_x = rng.uniform(0, period)
        sy = np.sin(2 * np.pi * (dy + phase_y) / period)
        sx = np.sin(2 * np.pi * (dx + phase_x) / period)
        if name == "hbars":
            d = sy * period / (2 * np.pi)
        elif name == "vbars":
            d = sx * period / (2 * np.pi)
        else:
            d = sx * sy * period / (2 * np.pi)
    else:  # pragma: no cover
        raise ValueError(f"unknown class label {label}")
    return _soft(d)


def _contrasting_colors(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    bg = rng.uniform(-0.9, 0.9, size=3)
    for _ in range(16):
        fg = rng.uniform(-0.9, 0.9, size=3)
        if np.abs(fg - bg).mean() > 0.6:
            return fg, bg
    return np.clip(bg + np.sign(rng.standard_normal(3)) * 1.0, -0.9, 0.9), bg


def make_shapes(n: int, seed: int = 0, size: int = 32, noise: float = 0.06) -> ImageBatch:
    """Generate n labeled images, classes drawn round-robin then shuffled."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % len(SHAPE_CLASSES)
    rng.shuffle(labels)
    images = np.empty((n, 3, size, size), dtype=np.float32)
    for i in range(n):
        mask = _shape_mask(int(labels[i]), size, rng)
        fg, bg = _contrasting_colors(rng)
        img = bg[:, None, None] * (1.0 - mask) + fg[:, None, None] * mask
        img += rng.normal(0.0, noise, size=img.shape)
        images[i] = np.clip(img, -1.0, 1.0)
    return ImageBatch(images, PixelRange(-1.0, 1.0), labels=labels, source="shapes32")


def load_dataset(name: str, n_train: int, n_eval: int, seed: int = 0) -> tuple[ImageBatch, ImageBatch]:
    """Named dataset registry; returns (train, eval) batches with disjoint seeds."""
    if name not in DATASETS:
        raise ValueError(f"unknown dataset {name!r}; available: {list(DATASETS)}")
    train = make_shapes(n_train, seed=seed)
    evalb = make_shapes(n_eval, seed=seed + 1)
    return train, evalb


def iter_batches(n: int, batch_size: int, rng: np.random.Generator | None = None):
    """Yield index arrays covering range(n); shuffled when an rng is given."""
    order = np.arange(n)
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]
