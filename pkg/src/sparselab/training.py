"""The training loop: shuffled mini-batch SGD with per-epoch test accuracy.

When the first layer is a convolution, its im2col gather depends only on
the (fixed) dataset, so it is precomputed once per call and sliced per
mini-batch; this takes MNIST-sized memory (~1.5 GB) and is skipped for
datasets where the buffer would be larger.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Tuple

import numpy as np

from .data import DataBundle
from .layers import conv2d_im2col
from .network import Network, _backward_nhwc, _forward_nhwc, sgd_step, to_nhwc

EVAL_BATCH = 2000
PRECOLS_BYTE_CAP = 2 * 10**9


class _ConvColsCache:
    """Per-image im2col rows of a dataset for the network's first conv layer."""

    def __init__(self, spec, images_nhwc):
        cols, pad_shape, self.oh, self.ow = conv2d_im2col(images_nhwc, spec)
        n = images_nhwc.shape[0]
        self.rows = cols.reshape(n, self.oh * self.ow, cols.shape[1])
        self.pad_hw = pad_shape[1:]

    def gather(self, idx):
        picked = self.rows[idx]
        pre_cols = picked.reshape(-1, picked.shape[2])
        return pre_cols, (len(idx), *self.pad_hw), self.oh, self.ow

    def slice(self, start, stop):
        picked = self.rows[start:stop]
        pre_cols = picked.reshape(-1, picked.shape[2])
        return pre_cols, (picked.shape[0], *self.pad_hw), self.oh, self.ow


def _cols_cache(net: Network, images_nhwc) -> Optional[_ConvColsCache]:
    first = net.arch.layers[0] if net.arch.layers else None
    if first is None or first.kind != "conv2d":
        return None
    n, h, w, _ = images_nhwc.shape
    oh = (h + 2 * first.padding - first.kernel_h) // first.stride + 1
    ow = (w + 2 * first.padding - first.kernel_w) // first.stride + 1
    if n * oh * ow * first.fan_in * 4 > PRECOLS_BYTE_CAP:
        return None
    return _ConvColsCache(first, images_nhwc)


def _eval_nhwc(net, images, labels, batch_size=EVAL_BATCH, cache=None):
    correct = 0
    for start in range(0, len(labels), batch_size):
        stop = min(start + batch_size, len(labels))
        pre = cache.slice(start, stop) if cache is not None else None
        logits, _ = _forward_nhwc(net, images[start:stop], keep_caches=False, first_pre=pre)
        correct += int((logits.argmax(axis=1) == labels[start:stop]).sum())
    return 100.0 * correct / len(labels)


def evaluate(net: Network, images: np.ndarray, labels: np.ndarray, batch_size: int = EVAL_BATCH) -> float:
    """Top-1 accuracy in percent; images in (B, C, H, W) order."""
    return _eval_nhwc(net, to_nhwc(images), labels, batch_size)


def train(
    net: Network,
    masks: Optional[Dict[int, np.ndarray]],
    data: DataBundle,
    epochs: int,
    lr: float = 0.01,
    batch_size: int = 32,
    rng_shuffle: Optional[np.random.Generator] = None,
) -> Tuple[Network, List[float]]:
    """Train in place for `epochs` epochs; returns (net, per-epoch test accuracy).

    One fresh permutation of the training set per epoch, trailing partial
    batch included. Fully deterministic given the shuffle generator state.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if len(data.train) == 0 or len(data.test) == 0:
        raise ValueError("dataset is empty")
    if rng_shuffle is None:
        rng_shuffle = np.random.default_rng(0)
    images = np.ascontiguousarray(to_nhwc(data.train.images))
    labels = data.train.labels
    test_images = np.ascontiguousarray(to_nhwc(data.test.images))
    train_cache = _cols_cache(net, images)
    test_cache = _cols_cache(net, test_images)
    n = len(labels)
    accuracies: List[float] = []
    for _ in range(epochs):
        perm = rng_shuffle.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            if train_cache is not None:
                # raw pixels are only consumed through the first conv's cols
                pre, xb = train_cache.gather(idx), None
            else:
                pre, xb = None, images[idx]
            grads_w, grads_b, _ = _backward_nhwc(net, xb, labels[idx], first_pre=pre)
            sgd_step(net, grads_w, grads_b, lr, masks)
        accuracies.append(_eval_nhwc(net, test_images, data.test.labels, cache=test_cache))
    return net, accuracies
