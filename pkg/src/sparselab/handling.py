"""Post-pruning weight treatments: rewind, finetune, sign-based reinits.

All four leave pruned coordinates at exactly 0 and are idempotent.
Biases are never pruned; rewind and both sign-based reinits reset them
to their captured initial values, finetuning leaves them alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from .errors import StateError
from .network import Network
from .pruning import MaskSet

HANDLINGS = ("rewind", "finetune", "sign_sigma", "sign_only")


@dataclass
class InitCheckpoint:
    """Parameter values captured at initialization, plus per-layer weight std.

    sigma[i] is the population standard deviation over every weight of
    layer i at capture time, pruned and unpruned alike.
    """

    weights: Dict[int, np.ndarray]
    biases: Dict[int, np.ndarray]
    sigma: Dict[int, float]


def capture_init(net: Network) -> InitCheckpoint:
    return InitCheckpoint(
        weights={i: w.copy() for i, w in net.weights.items()},
        biases={i: b.copy() for i, b in net.biases.items()},
        sigma={i: float(np.std(w.astype(np.float64))) for i, w in net.weights.items()},
    )


def _check_shapes(net: Network, ckpt: InitCheckpoint):
    for i, w in net.weights.items():
        if i not in ckpt.weights or ckpt.weights[i].shape != w.shape:
            raise StateError(f"checkpoint does not match network at layer {i}")


def rewind(net: Network, ckpt: InitCheckpoint, mask_set: MaskSet) -> Network:
    """Unpruned weights back to initial values, pruned to 0, biases to initial."""
    _check_shapes(net, ckpt)
    for i, w in net.weights.items():
        mask = mask_set.layers.get(i)
        if mask is None:
            np.copyto(w, ckpt.weights[i])
        else:
            np.multiply(ckpt.weights[i], mask, out=w)
        np.copyto(net.biases[i], ckpt.biases[i])
    return net


def finetune_carryover(net: Network, mask_set: MaskSet) -> Network:
    """Keep trained values; only force newly pruned coordinates to 0."""
    for i, w in net.weights.items():
        mask = mask_set.layers.get(i)
        if mask is not None:
            w *= mask
    return net


def sign_sigma_reinit(net: Network, ckpt: InitCheckpoint, mask_set: MaskSet) -> Network:
    """Unpruned weights to sigma_L * sign(initial value); biases to initial."""
    _check_shapes(net, ckpt)
    for i, w in net.weights.items():
        reset = ckpt.sigma[i] * np.sign(ckpt.weights[i])
        mask = mask_set.layers.get(i)
        if mask is None:
            np.copyto(w, reset)
        else:
            np.multiply(reset, mask, out=w)
        np.copyto(net.biases[i], ckpt.biases[i])
    return net


def sign_reinit(net: Network, ckpt: InitCheckpoint, mask_set: MaskSet) -> Network:
    """Unpruned weights to bare sign(initial value) in {-1, 0, +1}."""
    _check_shapes(net, ckpt)
    for i, w in net.weights.items():
        reset = np.sign(ckpt.weights[i])
        mask = mask_set.layers.get(i)
        if mask is None:
            np.copyto(w, reset)
        else:
            np.multiply(reset, mask, out=w)
        np.copyto(net.biases[i], ckpt.biases[i])
    return net


def apply_handling(name: str, net: Network, ckpt: InitCheckpoint, mask_set: MaskSet) -> Network:
    if name == "rewind":
        return rewind(net, ckpt, mask_set)
    if name == "finetune":
        return finetune_carryover(net, mask_set)
    if name == "sign_sigma":
        return sign_sigma_reinit(net, ckpt, mask_set)
    if name == "sign_only":
        return sign_reinit(net, ckpt, mask_set)
    raise ValueError(f"unknown handling {name!r}, expected one of {HANDLINGS}")
