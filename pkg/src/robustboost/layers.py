"""Minimal neural-network layers with explicit forward/backward passes.

Everything is plain numpy. Layers return a context object from ``forward``
that ``backward`` consumes, so the same model instance can serve concurrent
read-only callers. Convolutions use an im2col layout chosen so the GEMM input
is a free reshape.
"""

from __future__ import annotations

import numpy as np


class GradientError(RuntimeError):
    """Raised when a backward pass produces non-finite values; names the layer."""


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)


class Layer:
    name = "layer"

    def params(self) -> list[Param]:
        return []

    def forward(self, x, need_ctx=True):
        raise NotImplementedError

    def backward(self, ctx, gy, need_param_grad=True):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, in_features, out_features, rng, dtype, name="dense", scale=None):
        self.name = name
        if scale is None:
            scale = np.sqrt(2.0 / in_features)
        w = rng.standard_normal((in_features, out_features)) * scale
        self.w = Param(w.astype(dtype))
        self.b = Param(np.zeros(out_features, dtype=dtype))

    def params(self):
        return [self.w, self.b]

    def forward(self, x, need_ctx=True):
        y = x @ self.w.value + self.b.value
        return y, (x if need_ctx else None)

    def backward(self, ctx, gy, need_param_grad=True):
        if need_param_grad:
            self.w.grad += ctx.T @ gy
            self.b.grad += gy.sum(axis=0)
        return gy @ self.w.value.T


class ReLU(Layer):
    def __init__(self, name="relu"):
        self.name = name

    def forward(self, x, need_ctx=True):
        y = np.maximum(x, 0)
        return y, (x > 0 if need_ctx else None)

    def backward(self, ctx, gy, need_param_grad=True):
        return gy * ctx


class Tanh(Layer):
    def __init__(self, name="tanh"):
        self.name = name

    def forward(self, x, need_ctx=True):
        y = np.tanh(x)
        return y, (y if need_ctx else None)

    def backward(self, ctx, gy, need_param_grad=True):
        return gy * (1.0 - ctx * ctx)


class Flatten(Layer):
    def __init__(self, name="flatten"):
        self.name = name

    def forward(self, x, need_ctx=True):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, ctx, gy, need_param_grad=True):
        return gy.reshape(ctx)


class GlobalAvgPool(Layer):
    """(N, C, H, W) -> (N, C) spatial mean."""

    def __init__(self, name="gap"):
        self.name = name

    def forward(self, x, need_ctx=True):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, ctx, gy, need_param_grad=True):
        n, c, h, w = ctx
        g = np.empty(ctx, dtype=gy.dtype)
        g[:] = (gy / (h * w))[:, :, None, None]
        return g


def _im2col(x, k, stride, pad):
    """(N, C, H, W) -> cols (N, OH, OW, C, k, k) plus output spatial dims."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c, h, w = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    xt = x.transpose(0, 2, 3, 1)  # NHWC view
    cols = np.empty((n, oh, ow, c, k, k), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, :, i, j] = xt[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :]
    return cols, oh, ow


def _col2im(gcols, x_shape, k, stride, pad):
    """Adjoint of _im2col: scatter-add column gradients back to image layout."""
    n, c, h, w = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1
    gxt = np.zeros((n, hp, wp, c), dtype=gcols.dtype)
    for i in range(k):
        for j in range(k):
            gxt[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :] += gcols[:, :, :, :, i, j]
    gx = gxt.transpose(0, 3, 1, 2)
    if pad:
        gx = gx[:, :, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(gx)


class Conv2d(Layer):
    """3x3/1x1 convolution over NCHW arrays via im2col + GEMM."""

    def __init__(self, in_channels, out_channels, rng, dtype, kernel=3, stride=1, pad=None, name="conv"):
        self.name = name
        self.kernel = kernel
        self.stride = stride
        self.pad = (kernel // 2) if pad is None else pad
        fan_in = in_channels * kernel * kernel
        w = rng.standard_normal((out_channels, in_channels, kernel, kernel)) * np.sqrt(2.0 / fan_in)
        self.w = Param(w.astype(dtype))
        self.b = Param(np.zeros(out_channels, dtype=dtype))

    def params(self):
        return [self.w, self.b]

    def forward(self, x, need_ctx=True):
        k, s, p = self.kernel, self.stride, self.pad
        cols, oh, ow = _im2col(x, k, s, p)
        n = x.shape[0]
        cm = cols.reshape(n * oh * ow, -1)
        f = self.w.value.shape[0]
        y = cm @ self.w.value.reshape(f, -1).T
        y += self.b.value
        y = y.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)
        ctx = (cm, x.shape, oh, ow) if need_ctx else None
        return np.ascontiguousarray(y), ctx

    def backward(self, ctx, gy, need_param_grad=True):
        cm, x_shape, oh, ow = ctx
        n = x_shape[0]
        f = self.w.value.shape[0]
        gym = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(n * oh * ow, f)
        if need_param_grad:
            self.w.grad += (gym.T @ cm).reshape(self.w.value.shape)
            self.b.grad += gym.sum(axis=0)
        gcols = gym @ self.w.value.reshape(f, -1)
        k = self.kernel
        gcols = gcols.reshape(n, oh, ow, x_shape[1], k, k)
        return _col2im(gcols, x_shape, k, self.stride, self.pad)


class ResidualBlock(Layer):
    """conv-relu-conv plus a (projection) shortcut, then relu."""

    def __init__(self, in_channels, out_channels, rng, dtype, stride=1, name="block"):
        self.name = name
        self.conv1 = Conv2d(in_channels, out_channels, rng, dtype, stride=stride, name=f"{name}.conv1")
        self.conv2 = Conv2d(out_channels, out_channels, rng, dtype, name=f"{name}.conv2")
        if stride != 1 or in_channels != out_channels:
            self.shortcut = Conv2d(in_channels, out_channels, rng, dtype, kernel=1, stride=stride, pad=0,
                                   name=f"{name}.shortcut")
        else:
            self.shortcut = None

    def params(self):
        ps = self.conv1.params() + self.conv2.params()
        if self.shortcut is not None:
            ps += self.shortcut.params()
        return ps

    def forward(self, x, need_ctx=True):
        h1, c1 = self.conv1.forward(x, need_ctx)
        a1 = np.maximum(h1, 0)
        h2, c2 = self.conv2.forward(a1, need_ctx)
        if self.shortcut is not None:
            sc, c3 = self.shortcut.forward(x, need_ctx)
        else:
            sc, c3 = x, None
        pre = h2 + sc
        y = np.maximum(pre, 0)
        ctx = (c1, h1 > 0, c2, c3, pre > 0) if need_ctx else None
        return y, ctx

    def backward(self, ctx, gy, need_param_grad=True):
        c1, mask1, c2, c3, mask_out = ctx
        g = gy * mask_out
        ga1 = self.conv2.backward(c2, g, need_param_grad)
        gx = self.conv1.backward(c1, ga1 * mask1, need_param_grad)
        if self.shortcut is not None:
            gx += self.shortcut.backward(c3, g, need_param_grad)
        else:
            gx += g
        return gx


class Model:
    """Ordered layer stack with named feature taps.

    ``taps`` maps a scale name to the index of the layer whose output realizes
    that scale. Backward passes may inject extra gradient contributions at tap
    outputs, which is how multi-scale feature objectives reach the input.
    """

    def __init__(self, layers: list[Layer], taps: dict[str, int], dtype=np.float32):
        self.layers = layers
        self.taps = dict(taps)
        self.dtype = np.dtype(dtype)

    def params(self) -> list[Param]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def forward(self, x, need_ctx=False, collect=None):
        """Run the stack; optionally keep per-layer contexts and tap outputs.

        Returns (y, ctxs, tapped) where ctxs is None unless need_ctx, and
        tapped maps each requested scale name to its output array.
        """
        x = np.ascontiguousarray(x, dtype=self.dtype)
        ctxs = [] if need_ctx else None
        tapped = {}
        want = set(collect) if collect else set()
        index_to_scale = {}
        for scale in want:
            index_to_scale.setdefault(self.taps[scale], []).append(scale)
        y = x
        for i, layer in enumerate(self.layers):
            y, ctx = layer.forward(y, need_ctx)
            if need_ctx:
                ctxs.append(ctx)
            for scale in index_to_scale.get(i, ()):
                tapped[scale] = y
        return y, ctxs, tapped

    def backward(self, ctxs, gy=None, tap_grads=None, need_param_grad=True, check_finite=False):
        """Backpropagate from the output and/or from tap contributions to the input.

        gy is the gradient w.r.t. the final output (may be None when driving
        purely from tap_grads). Returns the gradient w.r.t. the model input.
        """
        scale_at = {}
        if tap_grads:
            for scale, g in tap_grads.items():
                scale_at.setdefault(self.taps[scale], []).append(g)
        g = gy
        for i in range(len(self.layers) - 1, -1, -1):
            for extra in scale_at.get(i, ()):
                g = extra if g is None else g + extra
            if g is None:
                continue
            g = self.layers[i].backward(ctxs[i], g, need_param_grad)
            if check_finite and not np.isfinite(g).all():
                raise GradientError(f"non-finite gradient leaving layer {self.layers[i].name!r}")
        return g

    def zero_grad(self):
        for p in self.params():
            p.grad[...] = 0

    def get_state(self) -> list[np.ndarray]:
        return [p.value.copy() for p in self.params()]

    def set_state(self, state):
        ps = self.params()
        if len(state) != len(ps):
            raise ValueError(f"state has {len(state)} arrays, model expects {len(ps)}")
        for p, v in zip(ps, state):
            if p.value.shape != v.shape:
                raise ValueError(f"shape mismatch: {p.value.shape} vs {v.shape}")
            p.value[...] = v.astype(p.value.dtype)

    def astype(self, dtype) -> "Model":
        """Deep copy of the model with parameters cast to dtype."""
        import copy

        clone = copy.deepcopy(self)
        clone.dtype = np.dtype(dtype)
        for p in clone.params():
            p.value = p.value.astype(dtype)
            p.grad = np.zeros_like(p.value)
        return clone
