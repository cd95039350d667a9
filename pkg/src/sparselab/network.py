"""Network container, seeded initialization, backprop, and the SGD step.

Public entry points take batches in (B, C, H, W) order (or (B, F) for
flat inputs); internally activations run NHWC, see layers.py.
"""

from __future__ import annotations

import math
from typing import Dict, Optional

import numpy as np

from .errors import ConfigError, DimensionError
from .layers import (
    conv2d_backward,
    conv2d_forward,
    conv2d_im2col,
    flatten_backward,
    flatten_forward,
    infer_shapes,
    linear_backward,
    linear_forward,
    maxpool2d_backward,
    maxpool2d_forward,
    relu_backward,
    relu_forward,
    tanh_backward,
    tanh_forward,
)
from .zoo import ArchitectureSpec

Params = Dict[int, np.ndarray]


class Network:
    """An architecture plus its parameter tensors, keyed by layer index."""

    def __init__(self, arch: ArchitectureSpec, weights: Params, biases: Params):
        self.arch = arch
        self.weights = weights
        self.biases = biases

    def copy(self) -> "Network":
        return Network(
            self.arch,
            {i: w.copy() for i, w in self.weights.items()},
            {i: b.copy() for i, b in self.biases.items()},
        )

    def parameter_count(self) -> int:
        return sum(w.size for w in self.weights.values()) + sum(
            b.size for b in self.biases.values()
        )


def init_network(arch: ArchitectureSpec, rng: np.random.Generator) -> Network:
    """Draw weights and biases uniform on [-1/sqrt(fan_in), +1/sqrt(fan_in)].

    Draw order is layer order, weight tensor before bias, elements
    row-major, so a given (seed, architecture) always yields the same net.
    """
    infer_shapes(arch.layers, arch.input_shape)
    weights: Params = {}
    biases: Params = {}
    for i, layer in enumerate(arch.layers):
        if layer.kind not in ("conv2d", "linear"):
            continue
        bound = 1.0 / math.sqrt(layer.fan_in)
        weights[i] = rng.uniform(-bound, bound, size=layer.weight_shape).astype(np.float32)
        out = layer.weight_shape[0]
        biases[i] = rng.uniform(-bound, bound, size=(out,)).astype(np.float32)
    return Network(arch, weights, biases)


def to_nhwc(batch: np.ndarray) -> np.ndarray:
    if batch.ndim == 4:
        return batch.transpose(0, 2, 3, 1)
    return batch


def _forward_nhwc(net: Network, x: np.ndarray, keep_caches: bool, first_pre=None):
    caches = [] if keep_caches else None
    for i, layer in enumerate(net.arch.layers):
        if layer.kind == "conv2d":
            pre = first_pre if i == 0 else None
            x, cache = conv2d_forward(x, net.weights[i], net.biases[i], layer, pre=pre)
        elif layer.kind == "linear":
            x, cache = linear_forward(x, net.weights[i], net.biases[i], layer)
        elif layer.kind == "maxpool2d":
            x, cache = maxpool2d_forward(x, layer)
        elif layer.kind == "relu":
            x, cache = relu_forward(x)
        elif layer.kind == "tanh":
            x, cache = tanh_forward(x)
        elif layer.kind == "flatten":
            x, cache = flatten_forward(x)
        else:
            raise ConfigError(f"layer {i}: unknown kind {layer.kind!r}")
        if keep_caches:
            caches.append(cache)
    return x, caches


def _check_batch(net: Network, batch: np.ndarray) -> np.ndarray:
    if tuple(batch.shape[1:]) != tuple(net.arch.input_shape):
        raise DimensionError(
            f"batch shape {tuple(batch.shape[1:])} does not match input shape "
            f"{tuple(net.arch.input_shape)}"
        )
    return to_nhwc(batch.astype(np.float32, copy=False))


def forward(net: Network, batch: np.ndarray) -> np.ndarray:
    """Logits for a batch shaped (B, *input_shape)."""
    logits, _ = _forward_nhwc(net, _check_batch(net, batch), keep_caches=False)
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict_proba(net: Network, images: np.ndarray, batch_size: int = 2000) -> np.ndarray:
    """Softmax class probabilities over a (N, *input_shape) array, batched."""
    out = []
    for start in range(0, len(images), batch_size):
        out.append(softmax(forward(net, images[start : start + batch_size])))
    return np.concatenate(out)


def _backward_nhwc(net: Network, x: np.ndarray, labels: np.ndarray, first_pre=None):
    logits, caches = _forward_nhwc(net, x, keep_caches=True, first_pre=first_pre)
    b = logits.shape[0]

    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    loss = float(np.mean(-z[np.arange(b), labels] + np.log(ez.sum(axis=1))))
    dx = probs
    dx[np.arange(b), labels] -= 1.0
    dx /= b

    grads_w: Params = {}
    grads_b: Params = {}
    first_param = min(net.weights) if net.weights else 0
    for i in range(len(net.arch.layers) - 1, -1, -1):
        layer = net.arch.layers[i]
        cache = caches[i]
        if layer.kind == "conv2d":
            dx, dw, db = conv2d_backward(
                dx, cache, net.weights[i], layer, need_dx=(i > first_param)
            )
            grads_w[i], grads_b[i] = dw, db
        elif layer.kind == "linear":
            dx, dw, db = linear_backward(dx, cache, net.weights[i], need_dx=(i > first_param))
            grads_w[i], grads_b[i] = dw, db
        elif layer.kind == "maxpool2d":
            dx = maxpool2d_backward(dx, cache, layer)
        elif layer.kind == "relu":
            dx = relu_backward(dx, cache)
        elif layer.kind == "tanh":
            dx = tanh_backward(dx, cache)
        elif layer.kind == "flatten":
            dx = flatten_backward(dx, cache)
    return grads_w, grads_b, loss


def backward(net: Network, batch: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy loss and its parameter gradients.

    Returns (grads_w, grads_b, loss); gradient dicts mirror the shapes of
    net.weights / net.biases exactly.
    """
    labels = np.asarray(labels)
    num_classes = net.arch.layers[-1].out_features
    if labels.ndim != 1 or labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"labels must be class indices in [0, {num_classes})")
    return _backward_nhwc(net, _check_batch(net, batch), labels)


def sgd_step(
    net: Network,
    grads_w: Params,
    grads_b: Params,
    lr: float,
    masks: Optional[Dict[int, np.ndarray]] = None,
) -> Network:
    """One SGD update, in place. Masked-out weights end the step at exactly 0.

    Biases are never masked.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for i, w in net.weights.items():
        w -= lr * grads_w[i]
        if masks is not None and masks.get(i) is not None:
            w *= masks[i]
        net.biases[i] -= lr * grads_b[i]
    return net
