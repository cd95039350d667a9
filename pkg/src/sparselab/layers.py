"""Layer definitions and their forward/backward kernels.

Everything is plain float32 numpy. Activations flow through the engine
in NHWC layout (batch, height, width, channels) so convolution im2col
buffers and gradients stay contiguous; weight tensors keep the
(out_channels, in_channels, kh, kw) convention that masks and analytics
are defined on, and flatten emits channel-major columns (channel c owns
one contiguous block) regardless of the internal layout.

Pooling picks winners by cascaded pairwise maximum over window offsets
in row-major order with strict-greater replacement, so the gradient is
always routed to the first maximal element of the window and repeated
runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _pool_jit
from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class Conv2d:
    kind: ClassVar[str] = "conv2d"
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel_h * self.kernel_w

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)


@dataclass(frozen=True)
class MaxPool2d:
    kind: ClassVar[str] = "maxpool2d"
    window: int
    stride: int


@dataclass(frozen=True)
class ReLU:
    kind: ClassVar[str] = "relu"


@dataclass(frozen=True)
class Tanh:
    kind: ClassVar[str] = "tanh"


@dataclass(frozen=True)
class Flatten:
    kind: ClassVar[str] = "flatten"


@dataclass(frozen=True)
class Linear:
    kind: ClassVar[str] = "linear"
    in_features: int
    out_features: int

    @property
    def fan_in(self) -> int:
        return self.in_features

    @property
    def weight_shape(self):
        return (self.out_features, self.in_features)


LayerSpec = Union[Conv2d, MaxPool2d, ReLU, Tanh, Flatten, Linear]

PARAMETRIC_KINDS = ("conv2d", "linear")


def infer_shapes(layers, input_shape):
    """Per-layer output shapes (C, H, W) / (F,) for a fixed input shape.

    Raises ConfigError naming the first layer whose input does not fit.
    """
    shapes = []
    cur = tuple(input_shape)
    for i, layer in enumerate(layers):
        if layer.kind == "conv2d":
            if len(cur) != 3 or cur[0] != layer.in_channels:
                raise ConfigError(
                    f"layer {i} (conv2d): expected input ({layer.in_channels}, H, W), got {cur}"
                )
            c, h, w = cur
            oh = (h + 2 * layer.padding - layer.kernel_h) // layer.stride + 1
            ow = (w + 2 * layer.padding - layer.kernel_w) // layer.stride + 1
            if oh < 1 or ow < 1:
                raise ConfigError(f"layer {i} (conv2d): kernel larger than input {cur}")
            cur = (layer.out_channels, oh, ow)
        elif layer.kind == "maxpool2d":
            if len(cur) != 3:
                raise ConfigError(f"layer {i} (maxpool2d): expected (C, H, W) input, got {cur}")
            c, h, w = cur
            oh = (h - layer.window) // layer.stride + 1
            ow = (w - layer.window) // layer.stride + 1
            if oh < 1 or ow < 1:
                raise ConfigError(f"layer {i} (maxpool2d): window larger than input {cur}")
            cur = (c, oh, ow)
        elif layer.kind in ("relu", "tanh"):
            pass
        elif layer.kind == "flatten":
            cur = (int(np.prod(cur)),)
        elif layer.kind == "linear":
            if len(cur) != 1 or cur[0] != layer.in_features:
                raise ConfigError(
                    f"layer {i} (linear): expected {layer.in_features} input features, got {cur}"
                )
            cur = (layer.out_features,)
        else:
            raise ConfigError(f"layer {i}: unknown kind {layer.kind!r}")
        shapes.append(cur)
    return shapes


def conv2d_im2col(x, spec: Conv2d):
    """Gather the im2col buffer for an NHWC batch.

    Returns (cols, padded_shape, oh, ow) with cols shaped
    (B*OH*OW, C*KH*KW), columns ordered (c, i, j).
    """
    batch, h, width, c = x.shape
    if c != spec.in_channels:
        raise DimensionError(f"conv2d expects {spec.in_channels} channels, got {c}")
    if spec.padding:
        p = spec.padding
        x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    kh, kw, s = spec.kernel_h, spec.kernel_w, spec.stride
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::s, ::s]
    oh, ow = win.shape[1], win.shape[2]
    # window axes come last: (B, OH, OW, C, KH, KW) -> columns ordered (c, i, j)
    cols = win.reshape(batch * oh * ow, c * kh * kw)
    return cols, x.shape, oh, ow


def conv2d_forward(x, w, b, spec: Conv2d, pre=None):
    """x is NHWC; returns NHWC output and the im2col buffer for backward.

    `pre` lets callers supply a precomputed conv2d_im2col result (the
    gather depends only on the inputs, so it can be cached per dataset).
    """
    cols, xpad_shape, oh, ow = pre if pre is not None else conv2d_im2col(x, spec)
    batch = xpad_shape[0]
    wmat = w.transpose(1, 2, 3, 0).reshape(-1, spec.out_channels)
    y = cols @ wmat
    y += b
    return y.reshape(batch, oh, ow, spec.out_channels), (xpad_shape, cols, oh, ow)


def conv2d_backward(dy, cache, w, spec: Conv2d, need_dx=True):
    xpad_shape, cols, oh, ow = cache
    batch = dy.shape[0]
    oc = spec.out_channels
    dyc = dy.reshape(batch * oh * ow, oc)
    dw = (dyc.T @ cols).reshape(oc, spec.in_channels, spec.kernel_h, spec.kernel_w)
    db = dyc.sum(axis=0)
    if not need_dx:
        return None, dw, db
    kh, kw, s = spec.kernel_h, spec.kernel_w, spec.stride
    wmat = w.transpose(1, 2, 3, 0).reshape(-1, oc)
    dcols = (dyc @ wmat.T).reshape(batch, oh, ow, spec.in_channels, kh, kw)
    dxpad = np.zeros(xpad_shape, dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            dxpad[:, i : i + s * oh : s, j : j + s * ow : s, :] += dcols[:, :, :, :, i, j]
    if spec.padding:
        p = spec.padding
        dxpad = dxpad[:, p:-p, p:-p, :]
    return dxpad, dw, db


def _pool_tiles(x, wsz, s, oh, ow):
    """Window-offset tiles of x, stacked contiguous: (wsz*wsz, B, OH, OW, C)."""
    batch, _, _, c = x.shape
    if s == wsz:
        trimmed = x[:, : s * oh, : s * ow, :]
        blocks = trimmed.reshape(batch, oh, s, ow, s, c)
        return np.ascontiguousarray(blocks.transpose(2, 4, 0, 1, 3, 5)).reshape(
            s * s, batch, oh, ow, c
        )
    tiles = np.empty((wsz * wsz, batch, oh, ow, c), dtype=x.dtype)
    for i in range(wsz):
        for j in range(wsz):
            tiles[i * wsz + j] = x[:, i : i + s * oh : s, j : j + s * ow : s, :]
    return tiles


def maxpool2d_forward(x, spec: MaxPool2d):
    """NHWC max pooling; remembers each window's winning offset.

    Winner selection is strict-greater over offsets in row-major order,
    i.e. ties go to the first maximal element of the window.
    """
    wsz, s = spec.window, spec.stride
    if _pool_jit.HAVE_JIT:
        y, winner = _pool_jit.pool_fwd(np.ascontiguousarray(x), wsz, s)
        return y, (winner, x.shape)
    batch, h, width, c = x.shape
    oh = (h - wsz) // s + 1
    ow = (width - wsz) // s + 1
    tiles = _pool_tiles(x, wsz, s, oh, ow)
    y = tiles[0].copy()
    winner = np.zeros(y.shape, dtype=np.uint8)
    for code in range(1, wsz * wsz):
        better = tiles[code] > y
        np.copyto(y, tiles[code], where=better)
        np.copyto(winner, code, where=better)
    return y, (winner, x.shape)


def maxpool2d_backward(dy, cache, spec: MaxPool2d):
    winner, xshape = cache
    wsz, s = spec.window, spec.stride
    if _pool_jit.HAVE_JIT:
        return _pool_jit.pool_bwd(np.ascontiguousarray(dy), winner, wsz, s, xshape[1], xshape[2])
    batch, oh, ow, c = dy.shape
    dx = np.zeros(xshape, dtype=dy.dtype)
    for i in range(wsz):
        for j in range(wsz):
            dx[:, i : i + s * oh : s, j : j + s * ow : s, :] += dy * (winner == i * wsz + j)
    return dx


def relu_forward(x):
    y = np.maximum(x, 0)
    return y, y


def relu_backward(dy, y):
    return dy * (y > 0)


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(dy, y):
    return dy * (1.0 - y * y)


def flatten_forward(x):
    """NHWC (B, H, W, C) -> (B, C*H*W) with channel-major column blocks."""
    if x.ndim == 2:
        return x, x.shape
    batch = x.shape[0]
    return x.transpose(0, 3, 1, 2).reshape(batch, -1), x.shape


def flatten_backward(dy, xshape):
    if len(xshape) == 2:
        return dy
    batch, h, w, c = xshape
    return np.ascontiguousarray(dy.reshape(batch, c, h, w).transpose(0, 2, 3, 1))


def linear_forward(x, w, b, spec: Linear):
    if x.shape[1] != spec.in_features:
        raise DimensionError(f"linear expects {spec.in_features} features, got {x.shape[1]}")
    return x @ w.T + b, x


def linear_backward(dy, x, w, need_dx=True):
    dw = dy.T @ x
    db = dy.sum(axis=0)
    dx = dy @ w if need_dx else None
    return dx, dw, db
