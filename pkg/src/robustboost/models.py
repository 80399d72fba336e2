"""Architecture registry: descriptor dicts -> layer stacks with named feature scales."""

from __future__ import annotations

import numpy as np

from .layers import Conv2d, Dense, Flatten, GlobalAvgPool, Model, ReLU, ResidualBlock

KINDS = ("linear", "small_resnet")


def scales_for(architecture: dict) -> tuple[str, ...]:
    """Feature scales a model of this architecture exposes, shallow to deep."""
    kind = architecture["kind"]
    if kind == "linear":
        return ("logits",)
    if kind == "small_resnet":
        return ("stage1", "stage2", "stage3", "embed", "logits")
    raise ValueError(f"unknown architecture kind {kind!r}; expected one of {KINDS}")


def build_model(architecture: dict, seed: int = 0, dtype=np.float32) -> Model:
    """Instantiate a freshly initialized model from a descriptor dict.

    Initialization is fully determined by (architecture, seed, dtype).
    """
    kind = architecture["kind"]
    classes = int(architecture["class_count"])
    input_shape = tuple(architecture["input_shape"])
    rng = np.random.default_rng(seed)

    if kind == "linear":
        d = int(np.prod(input_shape))
        head = Dense(d, classes, rng, dtype, name="head", scale=1.0 / np.sqrt(d))
        return Model([Flatten(), head], taps={"logits": 1}, dtype=dtype)

    if kind == "small_resnet":
        c_in = input_shape[0]
        c1, c2, c3 = architecture.get("channels", (12, 24, 48))
        layers = [
            Conv2d(c_in, c1, rng, dtype, name="stem"),
            ReLU(name="stem.relu"),
            ResidualBlock(c1, c2, rng, dtype, stride=2, name="block1"),
            ResidualBlock(c2, c3, rng, dtype, stride=2, name="block2"),
            GlobalAvgPool(name="gap"),
            Dense(c3, classes, rng, dtype, name="head", scale=1.0 / np.sqrt(c3)),
        ]
        taps = {"stage1": 1, "stage2": 2, "stage3": 3, "embed": 4, "logits": 5}
        return Model(layers, taps, dtype=dtype)

    raise ValueError(f"unknown architecture kind {kind!r}; expected one of {KINDS}")
