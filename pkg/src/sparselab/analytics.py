"""Mask similarity, effective sparsity, weight stability, and ensembling.

All operations are pure functions over masks, weight snapshots, and
prediction matrices; nothing here trains or mutates a network.
"""

from __future__ import annotations

from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .layers import infer_shapes
from .pruning import MaskSet
from .zoo import ArchitectureSpec


def jaccard_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - IoU over the kept (True) coordinates; two empty masks are distance 0."""
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    inter = int(np.logical_and(a, b).sum())
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 0.0
    return 1.0 - inter / union


def hamming_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Fraction of coordinates where the two masks disagree."""
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(a != b))


def effective_sparsity(mask_set: MaskSet, arch: ArchitectureSpec):
    """Explicit plus implicit (gradient-dead) pruning per prunable layer.

    A unit/channel is live iff some unpruned weight in the next prunable
    layer consumes it and feeds a live unit; activation, pooling, and
    flatten layers pass liveness through (flatten maps channel c to its
    block of columns). A weight is implicitly pruned when it is unpruned
    but its destination unit/channel is dead: downstream pruning has cut
    every path to the output, so it receives no gradient.

    Returns (rows, implicit_masks): rows are per-layer dicts, and
    implicit_masks[i] marks the implicitly pruned coordinates.
    """
    layers = arch.layers
    shapes = infer_shapes(layers, arch.input_shape)
    final = shapes[-1]
    if len(final) != 1:
        raise ConfigError("effective_sparsity expects a network ending in a flat layer")
    live = np.ones(final[0], dtype=bool)

    rows: List[dict] = []
    implicit_masks: Dict[int, np.ndarray] = {}
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        if layer.kind == "linear":
            mask = mask_set.layers.get(i)
            if mask is None:
                mask = np.ones(layer.weight_shape, dtype=bool)
            out_live = live[:, None]
            implicit = np.logical_and(mask, ~out_live)
            live = np.logical_and(mask, out_live).any(axis=0)
            implicit_masks[i] = implicit
            rows.append(_layer_row(i, mask, implicit))
        elif layer.kind == "conv2d":
            mask = mask_set.layers.get(i)
            if mask is None:
                mask = np.ones(layer.weight_shape, dtype=bool)
            out_live = live[:, None, None, None]
            implicit = np.logical_and(mask, ~out_live)
            live = np.logical_and(mask, out_live).any(axis=(0, 2, 3))
            implicit_masks[i] = implicit
            rows.append(_layer_row(i, mask, implicit))
        elif layer.kind == "flatten":
            c, h, w = shapes[i - 1] if i > 0 else arch.input_shape
            live = live.reshape(c, h * w).any(axis=1)
        # relu/tanh/maxpool2d pass liveness through unchanged
    rows.reverse()
    return rows, implicit_masks


def _layer_row(i, mask, implicit):
    total = mask.size
    explicit = total - int(mask.sum())
    nimp = int(implicit.sum())
    return {
        "layer": i,
        "total": total,
        "explicit_pruned": explicit,
        "implicit_pruned": nimp,
        "explicit_fraction": explicit / total,
        "effective_fraction": (explicit + nimp) / total,
    }


def stability_score(
    weights_seq: Sequence[Dict[int, np.ndarray]],
    masks_seq: Sequence[Dict[int, np.ndarray]],
) -> Dict[int, float]:
    """Mean |w_i - w_{i-1}| per layer over consecutive pruning iterations.

    Averaged over every (iteration, coordinate) pair where the coordinate
    is unpruned at iteration i; lower means more stable. Masks nest, so
    those coordinates were unpruned at i-1 as well.
    """
    if len(weights_seq) < 2:
        raise ValueError("stability needs at least two iterations")
    layers = sorted(weights_seq[0])
    out = {}
    for li in layers:
        num = 0.0
        den = 0
        for i in range(1, len(weights_seq)):
            mask = masks_seq[i].get(li)
            diff = np.abs(
                weights_seq[i][li].astype(np.float64) - weights_seq[i - 1][li]
            )
            if mask is None:
                num += float(diff.sum())
                den += diff.size
            else:
                num += float(diff[mask].sum())
                den += int(mask.sum())
        out[li] = num / den if den else 0.0
    return out


def quartile_movement(weights_a, weights_b, mask) -> Tuple[float, np.ndarray]:
    """Fraction of unpruned weights whose |w| quartile differs between snapshots.

    Returns (fraction, 4x4 transition counts). Quartiles are rank-based
    within the layer's unpruned weights; ties resolve by coordinate order.
    """
    sel = np.flatnonzero(mask.ravel())
    n = sel.size
    if n < 4:
        raise ValueError("need at least 4 unpruned weights for quartiles")
    qa = _quartiles(np.abs(weights_a.ravel()[sel]))
    qb = _quartiles(np.abs(weights_b.ravel()[sel]))
    moved = float(np.mean(qa != qb))
    trans = np.zeros((4, 4), dtype=np.int64)
    np.add.at(trans, (qa, qb), 1)
    return moved, trans


def _quartiles(values):
    order = np.argsort(values, kind="stable")
    ranks = np.empty_like(order)
    ranks[order] = np.arange(order.size)
    return (4 * ranks) // order.size


def ensemble_average(predictions: Sequence[np.ndarray], labels: np.ndarray):
    """Average class probabilities across models; argmax ties -> lowest class.

    Returns (predicted classes, accuracy in percent).
    """
    if len(predictions) < 2:
        raise ValueError("ensembling needs at least two models")
    base = np.asarray(predictions[0])
    for p in predictions:
        p = np.asarray(p)
        if p.shape != base.shape:
            raise ValueError("prediction sets are ragged")
        if np.abs(p.sum(axis=1) - 1.0).max() > 1e-5:
            raise ValueError("prediction rows must sum to 1")
    mean = np.mean(np.stack(predictions), axis=0)
    preds = mean.argmax(axis=1)
    accuracy = 100.0 * float(np.mean(preds == labels))
    return preds, accuracy


def agreement_matrix(predictions: Sequence[np.ndarray]) -> np.ndarray:
    """Pairwise counts of examples on which models' argmax predictions agree."""
    argmaxes = [np.asarray(p).argmax(axis=1) for p in predictions]
    m = len(argmaxes)
    out = np.zeros((m, m), dtype=np.int64)
    for p in range(m):
        for q in range(p, m):
            agree = int(np.sum(argmaxes[p] == argmaxes[q]))
            out[p, q] = out[q, p] = agree
    return out
