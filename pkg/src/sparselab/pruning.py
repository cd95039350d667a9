"""Mask scoring, selection, and the per-iteration prune step.

Masks are boolean arrays shaped like their weight tensors (True = kept).
Biases are never masked. Pruning only ever clears bits, so masks nest
across iterations by construction.

Structured methods act along the input axis: a slice is w[:, c, :, :]
for conv layers and column c for linear layers. Selection counts are
round-half-up of fraction * remaining, remaining counted in weights for
unstructured methods and in live slices for structured ones. Ties are
broken by ascending (layer index, row-major coordinate) so runs are
reproducible bit for bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .network import Network
from .zoo import ArchitectureSpec

log = logging.getLogger("sparselab")

METHODS = (
    "l1_unstructured",
    "random_unstructured",
    "l1_structured",
    "l2_structured",
    "linf_structured",
    "random_structured",
    "hybrid",
    "fc_only",
)
SCOPES = ("local", "global")
DIRECTIONS = ("prune_low", "prune_high")


@dataclass(frozen=True)
class PruneSpec:
    method: str
    scope: str = "local"
    direction: str = "prune_low"
    fraction_per_iter: float = 0.2

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown pruning method {self.method!r}")
        if self.scope not in SCOPES:
            raise ValueError(f"unknown scope {self.scope!r}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")
        if not 0.0 < self.fraction_per_iter < 1.0:
            raise ValueError("fraction_per_iter must be in (0, 1)")


@dataclass
class MaskSet:
    layers: Dict[int, np.ndarray]
    iteration: int = 0

    def copy(self) -> "MaskSet":
        return MaskSet({i: m.copy() for i, m in self.layers.items()}, self.iteration)

    def kept_count(self) -> int:
        return int(sum(m.sum() for m in self.layers.values()))

    def total_count(self) -> int:
        return int(sum(m.size for m in self.layers.values()))


def all_ones_masks(arch: ArchitectureSpec) -> MaskSet:
    layers = {}
    for i in arch.prunable_layers:
        layers[i] = np.ones(arch.layers[i].weight_shape, dtype=bool)
    return MaskSet(layers, iteration=0)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def score_unstructured(weights, method: str, rng: Optional[np.random.Generator] = None):
    """Per-weight scores: |w| for l1, fresh uniforms for random."""
    if method == "l1":
        return np.abs(weights).astype(np.float64)
    if method == "random":
        if rng is None:
            raise ValueError("random scoring needs the prune_random stream")
        return rng.random(weights.shape)
    raise ValueError(f"unknown unstructured scorer {method!r}")


def score_structured(weights, method: str, layer_kind: str, rng: Optional[np.random.Generator] = None):
    """Per-input-slice scores; slice axis is 1 for conv2d, 1 for linear."""
    w = weights.astype(np.float64)
    if layer_kind == "conv2d":
        axes = (0, 2, 3)
    elif layer_kind == "linear":
        axes = (0,)
    else:
        raise ValueError(f"layer kind {layer_kind!r} has no structured slices")
    if method == "l1":
        return np.abs(w).sum(axis=axes)
    if method == "l2":
        return np.sqrt((w * w).sum(axis=axes))
    if method == "linf":
        return np.abs(w).max(axis=axes)
    if method == "random":
        if rng is None:
            raise ValueError("random scoring needs the prune_random stream")
        return rng.random(weights.shape[1])
    raise ValueError(f"unknown structured scorer {method!r}")


def select(scores, candidates, k: int, direction: str = "prune_low"):
    """Indices of the k candidates to prune.

    `scores` and `candidates` are flat and parallel; candidates marks
    which coordinates are still prunable. Ties go to the lower index.
    prune_high on s selects exactly what prune_low selects on -s.
    """
    idx = np.flatnonzero(candidates)
    if k <= 0 or idx.size == 0:
        return idx[:0]
    k = min(k, idx.size)
    s = scores[idx]
    if direction == "prune_high":
        s = -s
    order = np.lexsort((idx, s))
    return idx[order[:k]]


def _slice_alive(mask, kind: str):
    if kind == "conv2d":
        return mask.any(axis=(0, 2, 3))
    return mask.any(axis=0)


def _clear_slices(mask, slice_idx):
    mask[:, slice_idx] = False


def _layer_plan(spec: PruneSpec, arch: ArchitectureSpec):
    """Resolve the per-layer (style, scorer) for a pruning method."""
    plan = {}
    for i in arch.prunable_layers:
        kind = arch.layers[i].kind
        if spec.method == "hybrid":
            plan[i] = ("structured", "l1") if kind == "conv2d" else ("unstructured", "l1")
        elif spec.method == "fc_only":
            if kind == "linear":
                plan[i] = ("unstructured", "l1")
        elif spec.method.endswith("_unstructured"):
            plan[i] = ("unstructured", spec.method.rsplit("_", 1)[0])
        else:
            plan[i] = ("structured", spec.method.rsplit("_", 1)[0])
    return plan


def prune_step(
    net: Network,
    mask_set: MaskSet,
    spec: PruneSpec,
    rng: Optional[np.random.Generator] = None,
) -> MaskSet:
    """One pruning iteration over the trained weights; returns nested masks.

    Random scores are drawn from `rng` per participating layer in layer
    order, so consumption is reproducible. Structured layers down to one
    remaining input slice are frozen rather than pruned to nothing.
    """
    arch = net.arch
    plan = _layer_plan(spec, arch)
    new = mask_set.copy()
    new.iteration = mask_set.iteration + 1

    # candidate sets and scores, in layer order
    entries = {}
    for i in sorted(plan):
        style, scorer = plan[i]
        w = net.weights[i]
        mask = new.layers[i]
        kind = arch.layers[i].kind
        if style == "unstructured":
            scores = score_unstructured(w, scorer, rng).ravel()
            candidates = mask.ravel().copy()
        else:
            scores = score_structured(w, scorer, kind, rng)
            candidates = _slice_alive(mask, kind)
            if int(candidates.sum()) <= 1:
                continue  # frozen: cannot structurally prune to zero slices
        entries[i] = (style, scores, candidates)

    frac = spec.fraction_per_iter
    if spec.scope == "local":
        for i, (style, scores, candidates) in entries.items():
            remaining = int(candidates.sum())
            k = round_half_up(frac * remaining)
            if style == "structured":
                k = min(k, remaining - 1)
            if k == 0:
                log.debug("layer %d: empty selection (%d remaining)", i, remaining)
            chosen = select(scores, candidates, k, spec.direction)
            _apply(new.layers[i], style, chosen)
    else:
        for pool in _pools(spec, arch, entries):
            total = sum(int(entries[i][2].sum()) for i in pool)
            k = round_half_up(frac * total)
            chosen = _select_global(entries, pool, k, spec.direction)
            for i, local_idx in chosen.items():
                _apply(new.layers[i], entries[i][0], local_idx)
    return new


def _apply(mask, style, chosen):
    if chosen.size == 0:
        return
    if style == "unstructured":
        mask.ravel()[chosen] = False
    else:
        _clear_slices(mask, chosen)


def _pools(spec: PruneSpec, arch: ArchitectureSpec, entries):
    """Pool layers for global selection.

    Uniform methods pool every participating layer; methods that mix
    styles (hybrid) pool only layers of the same kind together.
    """
    if spec.method == "hybrid":
        conv = [i for i in entries if arch.layers[i].kind == "conv2d"]
        fc = [i for i in entries if arch.layers[i].kind == "linear"]
        return [p for p in (conv, fc) if p]
    return [list(entries)] if entries else []


def _select_global(entries, pool, k, direction):
    scores = []
    layer_ids = []
    coords = []
    for i in pool:
        _, s, cand = entries[i]
        idx = np.flatnonzero(cand)
        scores.append(s[idx])
        coords.append(idx)
        layer_ids.append(np.full(idx.size, i))
    if not scores:
        return {}
    scores = np.concatenate(scores)
    coords = np.concatenate(coords)
    layer_ids = np.concatenate(layer_ids)
    if k <= 0 or scores.size == 0:
        return {}
    k = min(k, scores.size)
    if direction == "prune_high":
        scores = -scores
    order = np.lexsort((coords, layer_ids, scores))[:k]
    out = {}
    for i in pool:
        sel = order[layer_ids[order] == i]
        out[i] = coords[sel]
    return out


def explicit_fractions(mask_set: MaskSet):
    """Per-layer fraction of weights explicitly pruned (mask == 0)."""
    return {
        i: 1.0 - float(m.sum()) / m.size for i, m in sorted(mask_set.layers.items())
    }


def dead_slice_fraction(mask, kind: str) -> float:
    """Fraction of input slices whose mask is entirely 0.

    The structuredness statistic: how much an (possibly unstructured)
    mask looks like input-axis structured pruning.
    """
    alive = _slice_alive(mask, kind)
    return 1.0 - float(alive.sum()) / alive.size
