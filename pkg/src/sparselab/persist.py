"""Checkpoint and mask persistence.

A checkpoint is a directory `<tag>.ckpt/` holding a JSON manifest, one
raw little-endian float32 file per parameter tensor, and optionally a
masks/ subdirectory. Every payload file carries a 64-bit FNV-1a
checksum in the manifest. Round trips are bitwise exact, including RNG
stream state, so a resumed run is indistinguishable from an
uninterrupted one.

Masks serialize as one byte per bit (0x00 pruned / 0x01 kept),
row-major, next to a JSON manifest naming layer, shape, and iteration;
the same format is read back by the analytics and report layers.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .errors import PersistenceError, StateError
from .handling import InitCheckpoint
from .network import Network
from .pruning import MaskSet
from .zoo import ArchitectureSpec

FORMAT_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> str:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return f"{h:016x}"


def layer_names(arch: ArchitectureSpec) -> Dict[int, str]:
    """Human names for prunable layers: conv1, conv2, ..., fc1, fc2, ..."""
    names = {}
    counts = {"conv2d": 0, "linear": 0}
    for i in arch.prunable_layers:
        kind = arch.layers[i].kind
        counts[kind] += 1
        prefix = "conv" if kind == "conv2d" else "fc"
        names[i] = f"{prefix}{counts[kind]}"
    return names


def save_masks(directory, mask_set: MaskSet, arch: ArchitectureSpec) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = layer_names(arch)
    entries = []
    for i in sorted(mask_set.layers):
        mask = mask_set.layers[i]
        payload = np.ascontiguousarray(mask, dtype=np.uint8).tobytes()
        fname = f"{names[i]}.mask"
        (directory / fname).write_bytes(payload)
        entries.append(
            {
                "layer": names[i],
                "layer_index": i,
                "shape": list(mask.shape),
                "iteration": mask_set.iteration,
                "file": fname,
                "fnv1a64": fnv1a64(payload),
            }
        )
    manifest = {"format_version": FORMAT_VERSION, "masks": entries}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_masks(directory, arch: ArchitectureSpec) -> MaskSet:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise PersistenceError(f"{directory}: unsupported mask format version")
    layers = {}
    iteration = 0
    for entry in manifest["masks"]:
        payload = (directory / entry["file"]).read_bytes()
        if fnv1a64(payload) != entry["fnv1a64"]:
            raise PersistenceError(f"{directory / entry['file']}: checksum mismatch")
        idx = entry["layer_index"]
        shape = tuple(entry["shape"])
        expected = arch.layers[idx].weight_shape
        if shape != expected:
            raise StateError(
                f"mask {entry['layer']} has shape {shape}, architecture expects {expected}"
            )
        layers[idx] = np.frombuffer(payload, dtype=np.uint8).reshape(shape).astype(bool)
        iteration = entry["iteration"]
    return MaskSet(layers, iteration=iteration)


def save_checkpoint(
    run_dir,
    tag: str,
    net: Network,
    masks: Optional[MaskSet] = None,
    rng_states: Optional[dict] = None,
    sigma: Optional[Dict[int, float]] = None,
    extra: Optional[dict] = None,
) -> Path:
    """Write `<run_dir>/<tag>.ckpt/`; the manifest lands last so a complete
    manifest implies a complete checkpoint."""
    ckpt = Path(run_dir) / f"{tag}.ckpt"
    ckpt.mkdir(parents=True, exist_ok=True)
    tensors = []
    for role, params in (("weight", net.weights), ("bias", net.biases)):
        for i in sorted(params):
            arr = params[i]
            payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            fname = f"layer{i:02d}.{role}.f32"
            (ckpt / fname).write_bytes(payload)
            tensors.append(
                {
                    "layer": i,
                    "role": role,
                    "shape": list(arr.shape),
                    "file": fname,
                    "fnv1a64": fnv1a64(payload),
                }
            )
    if masks is not None:
        save_masks(ckpt / "masks", masks, net.arch)
    manifest = {
        "format_version": FORMAT_VERSION,
        "arch_name": net.arch.name,
        "tensors": tensors,
        "has_masks": masks is not None,
        "rng": rng_states or {},
        "sigma": {str(k): v for k, v in (sigma or {}).items()},
        "extra": extra or {},
    }
    (ckpt / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return ckpt


def checkpoint_exists(run_dir, tag: str) -> bool:
    return (Path(run_dir) / f"{tag}.ckpt" / "manifest.json").exists()


def load_checkpoint(run_dir, tag: str, arch: ArchitectureSpec) -> dict:
    """Load a checkpoint into a fresh Network for `arch`.

    Returns {"net", "masks", "rng", "sigma", "extra"}. Shape mismatches
    raise StateError; corrupt payloads raise PersistenceError.
    """
    ckpt = Path(run_dir) / f"{tag}.ckpt"
    try:
        manifest = json.loads((ckpt / "manifest.json").read_text())
    except FileNotFoundError:
        raise PersistenceError(f"{ckpt}: no checkpoint manifest") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise PersistenceError(
            f"{ckpt}: format version {manifest.get('format_version')} != {FORMAT_VERSION}"
        )
    weights, biases = {}, {}
    for entry in manifest["tensors"]:
        payload = (ckpt / entry["file"]).read_bytes()
        if fnv1a64(payload) != entry["fnv1a64"]:
            raise PersistenceError(f"{ckpt / entry['file']}: checksum mismatch")
        arr = np.frombuffer(payload, dtype="<f4").reshape(entry["shape"]).copy()
        i = entry["layer"]
        if i >= len(arch.layers) or arch.layers[i].kind not in ("conv2d", "linear"):
            raise StateError(f"checkpoint layer {i} does not exist in architecture")
        expected = (
            arch.layers[i].weight_shape
            if entry["role"] == "weight"
            else (arch.layers[i].weight_shape[0],)
        )
        if tuple(entry["shape"]) != expected:
            raise StateError(
                f"checkpoint tensor layer {i} {entry['role']} has shape "
                f"{tuple(entry['shape'])}, architecture expects {expected}"
            )
        (weights if entry["role"] == "weight" else biases)[i] = arr
    if set(weights) != set(arch.prunable_layers):
        raise StateError("checkpoint does not cover the architecture's parametric layers")
    net = Network(arch, weights, biases)
    masks = load_masks(ckpt / "masks", arch) if manifest.get("has_masks") else None
    sigma = {int(k): float(v) for k, v in manifest.get("sigma", {}).items()}
    return {
        "net": net,
        "masks": masks,
        "rng": manifest.get("rng", {}),
        "sigma": sigma,
        "extra": manifest.get("extra", {}),
    }


def init_checkpoint_from(loaded: dict) -> InitCheckpoint:
    net = loaded["net"]
    return InitCheckpoint(weights=net.weights, biases=net.biases, sigma=loaded["sigma"])
