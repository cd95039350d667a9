"""Experiment orchestration: single runs, sweeps, resumability.

A run directory looks like

    runs/<run_id>/
      config.json
      record.json
      init.ckpt/
      iter_000/ ... iter_NNN/
        final.ckpt/      trained state at end of the iteration's stint
        masks/           masks active during the stint (exchange format)
        metrics.csv      per-epoch test accuracy + sparsity columns

iter_k holds the network trained with the mask after k pruning steps;
iter_000 is the dense baseline. Each final.ckpt carries the shuffle and
prune stream states as of the end of its stint, so an interrupted run
resumes bitwise-identically: the next prune step is recomputed from the
stored trained weights and stream state.

The run id is keyed by a hash of the experiment cell (everything except
the output directory and the iteration count), so re-running a finished
cell is a no-op and asking for more iterations extends it in place.

The dense stint (iteration 0) does not depend on method or handling, so
it is shared across cells of one seed through runs/_dense/<hash>/.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .analytics import effective_sparsity
from .data import DataBundle, load_dataset
from .errors import ConfigError, StateError
from .handling import HANDLINGS, InitCheckpoint, apply_handling, capture_init
from .network import Network, init_network
from .persist import (
    checkpoint_exists,
    init_checkpoint_from,
    load_checkpoint,
    save_checkpoint,
    save_masks,
)
from .pruning import METHODS, MaskSet, PruneSpec, all_ones_masks, prune_step
from .rng import make_rng, restore_rng, rng_state
from .training import train
from .zoo import ArchitectureSpec, BUILDERS, parse_architecture

log = logging.getLogger("sparselab")


@dataclass
class ExperimentConfig:
    method: str
    seed: int = 0
    architecture: str = "lenet"
    dataset: str = "mnist"
    epochs_per_iteration: int = 30
    lr: float = 0.01
    batch_size: int = 32
    iterations: int = 20
    fraction: float = 0.2
    scope: str = "local"
    direction: str = "prune_low"
    handling: str = "rewind"
    checkpoint_capture_epoch: int = 0
    output_dir: str = "runs"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.handling not in HANDLINGS:
            raise ConfigError(f"unknown handling {self.handling!r}")
        for name in ("epochs_per_iteration", "lr", "batch_size", "iterations"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 < self.fraction < 1.0:
            raise ConfigError("fraction must be in (0, 1)")
        if self.checkpoint_capture_epoch < 0:
            raise ConfigError("checkpoint_capture_epoch must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def prune_spec(self) -> PruneSpec:
        return PruneSpec(
            method=self.method,
            scope=self.scope,
            direction=self.direction,
            fraction_per_iter=self.fraction,
        )


def config_hash(config: ExperimentConfig) -> str:
    doc = config.to_dict()
    doc.pop("output_dir")
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def cell_hash(config: ExperimentConfig) -> str:
    """Identity of the experimental cell; iteration count is extent, not identity."""
    doc = config.to_dict()
    doc.pop("output_dir")
    doc.pop("iterations")
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def run_id(config: ExperimentConfig) -> str:
    arch = Path(config.architecture).stem
    return (
        f"{arch}_{config.dataset}_{config.method}_{config.handling}"
        f"_s{config.seed}_{cell_hash(config)[:8]}"
    )


def resolve_architecture(name_or_path: str) -> ArchitectureSpec:
    if name_or_path in BUILDERS:
        return BUILDERS[name_or_path]()
    path = Path(name_or_path)
    if path.exists():
        return parse_architecture(path.read_text())
    raise ConfigError(f"unknown architecture {name_or_path!r} (not a builder or a file)")


@dataclass
class RunRecord:
    config: ExperimentConfig
    run_dir: Path
    status: str
    accuracies: List[float] = field(default_factory=list)
    explicit_fraction: List[float] = field(default_factory=list)
    effective_fraction: List[float] = field(default_factory=list)

    @property
    def iterations_done(self) -> int:
        return len(self.accuracies) - 1

    def to_json(self) -> str:
        doc = {
            "config": self.config.to_dict(),
            "config_hash": config_hash(self.config),
            "cell_hash": cell_hash(self.config),
            "status": self.status,
            "accuracies": self.accuracies,
            "explicit_fraction": self.explicit_fraction,
            "effective_fraction": self.effective_fraction,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def load(cls, run_dir) -> "RunRecord":
        run_dir = Path(run_dir)
        doc = json.loads((run_dir / "record.json").read_text())
        return cls(
            config=ExperimentConfig(**doc["config"]),
            run_dir=run_dir,
            status=doc["status"],
            accuracies=doc["accuracies"],
            explicit_fraction=doc["explicit_fraction"],
            effective_fraction=doc["effective_fraction"],
        )


def _iter_dir(run_dir: Path, k: int) -> Path:
    return run_dir / f"iter_{k:03d}"


def _iter_complete(run_dir: Path, k: int) -> bool:
    d = _iter_dir(run_dir, k)
    return checkpoint_exists(d, "final") and (d / "metrics.csv").exists()


def _network_fractions(rows) -> Dict[str, float]:
    total = sum(r["total"] for r in rows)
    explicit = sum(r["explicit_pruned"] for r in rows)
    implicit = sum(r["implicit_pruned"] for r in rows)
    return {
        "explicit": explicit / total,
        "effective": (explicit + implicit) / total,
    }


def _write_metrics(path: Path, iteration: int, accs, fractions) -> None:
    lines = ["iteration,epoch,test_accuracy,explicit_fraction,effective_fraction"]
    for e, acc in enumerate(accs, start=1):
        lines.append(
            f"{iteration},{e},{acc:.6f},{fractions['explicit']:.8f},{fractions['effective']:.8f}"
        )
    path.write_text("\n".join(lines) + "\n")


def _persist_iteration(run_dir, k, net, masks, arch, accs, rng_shuffle, rng_prune):
    d = _iter_dir(Path(run_dir), k)
    d.mkdir(parents=True, exist_ok=True)
    save_masks(d / "masks", masks, arch)
    rows, _ = effective_sparsity(masks, arch)
    fractions = _network_fractions(rows)
    save_checkpoint(
        d,
        "final",
        net,
        masks=masks,
        rng_states={"shuffle": rng_state(rng_shuffle), "prune_random": rng_state(rng_prune)},
        extra={"iteration": k, "accuracies": accs},
    )
    _write_metrics(d / "metrics.csv", k, accs, fractions)
    return fractions


def _dense_cache_dir(config: ExperimentConfig, arch: ArchitectureSpec) -> Path:
    from .zoo import serialize_architecture

    key = {
        "architecture": serialize_architecture(arch),
        "dataset": config.dataset,
        "seed": config.seed,
        "epochs_per_iteration": config.epochs_per_iteration,
        "lr": config.lr,
        "batch_size": config.batch_size,
        "checkpoint_capture_epoch": config.checkpoint_capture_epoch,
    }
    h = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]
    return Path(config.output_dir) / "_dense" / h


def _try_import_dense(run_dir: Path, cache: Path) -> bool:
    if not (cache / "init.ckpt" / "manifest.json").exists():
        return False
    if not checkpoint_exists(cache / "iter_000", "final"):
        return False
    shutil.copytree(cache / "init.ckpt", run_dir / "init.ckpt", dirs_exist_ok=True)
    shutil.copytree(cache / "iter_000", run_dir / "iter_000", dirs_exist_ok=True)
    return True


def _export_dense(run_dir: Path, cache: Path) -> None:
    if (cache / "init.ckpt" / "manifest.json").exists():
        return
    tmp = cache.parent / (cache.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    shutil.copytree(run_dir / "init.ckpt", tmp / "init.ckpt")
    shutil.copytree(run_dir / "iter_000", tmp / "iter_000")
    tmp.replace(cache)


def run_experiment(
    config: ExperimentConfig,
    data: Optional[DataBundle] = None,
    share_dense: bool = True,
) -> RunRecord:
    """Execute (or resume, or extend) one experiment cell.

    Deterministic per (seed, config): two invocations produce bitwise
    identical checkpoints, masks, and metrics. A completed cell returns
    its record without retraining.
    """
    arch = resolve_architecture(config.architecture)
    run_dir = Path(config.output_dir) / run_id(config)
    run_dir.mkdir(parents=True, exist_ok=True)

    cfg_path = run_dir / "config.json"
    if cfg_path.exists():
        prev = json.loads(cfg_path.read_text())
        if prev.get("cell_hash") != cell_hash(config):
            raise StateError(f"{run_dir} holds a different experiment cell")
    else:
        cfg_path.write_text(
            json.dumps(
                {"config": config.to_dict(), "config_hash": config_hash(config),
                 "cell_hash": cell_hash(config)},
                indent=1,
            )
        )

    # resume point: highest contiguous complete iteration
    done = -1
    while _iter_complete(run_dir, done + 1):
        done += 1
    if done >= config.iterations:
        record = _rebuild_record(config, run_dir, status="complete")
        record_path = run_dir / "record.json"
        record_path.write_text(record.to_json())
        log.info("%s: already complete (%d iterations)", run_id(config), done)
        return record

    if data is None:
        data = load_dataset(config.dataset)

    spec = config.prune_spec()
    if done < 0:
        # fresh run: init network, capture the rewind reference, dense stint
        rng_init = make_rng(config.seed, "init")
        rng_shuffle = make_rng(config.seed, "shuffle")
        rng_prune = make_rng(config.seed, "prune_random")
        cache = _dense_cache_dir(config, arch) if share_dense else None
        if cache is not None and _try_import_dense(run_dir, cache):
            log.info("%s: dense stint imported from shared cache", run_id(config))
        else:
            net = init_network(arch, rng_init)
            masks = all_ones_masks(arch)
            accs: List[float] = []
            cap = config.checkpoint_capture_epoch
            if cap > 0:
                if cap >= config.epochs_per_iteration:
                    raise ConfigError(
                        "checkpoint_capture_epoch must be below epochs_per_iteration"
                    )
                net, accs_head = train(
                    net, masks.layers, data, cap, config.lr, config.batch_size, rng_shuffle
                )
                accs.extend(accs_head)
            init_ckpt = capture_init(net)
            save_checkpoint(
                run_dir, "init", net, masks=None,
                rng_states={"shuffle": rng_state(rng_shuffle),
                            "prune_random": rng_state(rng_prune)},
                sigma=init_ckpt.sigma,
                extra={"capture_epoch": cap},
            )
            net, accs_tail = train(
                net, masks.layers, data, config.epochs_per_iteration - cap,
                config.lr, config.batch_size, rng_shuffle,
            )
            accs.extend(accs_tail)
            _persist_iteration(run_dir, 0, net, masks, arch, accs, rng_shuffle, rng_prune)
            if cache is not None:
                _export_dense(run_dir, cache)
        done = 0

    # load continuation state from the last complete iteration
    loaded_init = load_checkpoint(run_dir, "init", arch)
    init_ckpt = init_checkpoint_from(loaded_init)
    last = load_checkpoint(_iter_dir(run_dir, done), "final", arch)
    net = last["net"]
    masks = last["masks"]
    rng_shuffle = restore_rng(last["rng"]["shuffle"])
    rng_prune = restore_rng(last["rng"]["prune_random"])

    record = _rebuild_record(config, run_dir, status="running")
    (run_dir / "record.json").write_text(record.to_json())

    for k in range(done + 1, config.iterations + 1):
        t0 = time.time()
        masks = prune_step(net, masks, spec, rng_prune)
        apply_handling(config.handling, net, init_ckpt, masks)
        net, accs = train(
            net, masks.layers, data, config.epochs_per_iteration,
            config.lr, config.batch_size, rng_shuffle,
        )
        fractions = _persist_iteration(
            run_dir, k, net, masks, arch, accs, rng_shuffle, rng_prune
        )
        record.accuracies.append(accs[-1])
        record.explicit_fraction.append(fractions["explicit"])
        record.effective_fraction.append(fractions["effective"])
        record.status = "complete" if k == config.iterations else "running"
        (run_dir / "record.json").write_text(record.to_json())
        log.info(
            "%s: iteration %d/%d acc=%.2f sparsity=%.3f (%.0fs)",
            run_id(config), k, config.iterations, accs[-1],
            fractions["explicit"], time.time() - t0,
        )
    return record


def _rebuild_record(config: ExperimentConfig, run_dir: Path, status: str) -> RunRecord:
    """Reconstruct the summary record from persisted iteration metrics."""
    record = RunRecord(config=config, run_dir=run_dir, status=status)
    k = 0
    while _iter_complete(run_dir, k):
        lines = (_iter_dir(run_dir, k) / "metrics.csv").read_text().strip().splitlines()
        last = lines[-1].split(",")
        record.accuracies.append(float(last[2]))
        record.explicit_fraction.append(float(last[3]))
        record.effective_fraction.append(float(last[4]))
        k += 1
    return record


def expand_grid(doc: dict) -> List[ExperimentConfig]:
    """Configs from a grid document.

    {"base": {...}, "cells": [{...}, ...]} lists cells explicitly (run
    order preserved); {"base": {...}, "axes": {field: [values]}} takes
    the cross product.
    """
    base = dict(doc.get("base", {}))
    if "cells" in doc:
        return [ExperimentConfig(**{**base, **cell}) for cell in doc["cells"]]
    axes = doc.get("axes", {})
    configs = [base]
    for field_name in sorted(axes):
        configs = [dict(c, **{field_name: v}) for c in configs for v in axes[field_name]]
    return [ExperimentConfig(**c) for c in configs]


def run_sweep(
    configs: List[ExperimentConfig],
    data_cache: Optional[Dict[str, DataBundle]] = None,
) -> List[dict]:
    """Run cells sequentially; failures are reported per cell, not raised.

    Cells are independent and deterministic, so a sweep may also be
    distributed by invoking `sparselab run` per cell in separate
    processes; within a cell everything is single-threaded.
    """
    data_cache = data_cache if data_cache is not None else {}
    results = []
    for config in configs:
        name = run_id(config)
        try:
            if config.dataset not in data_cache:
                data_cache[config.dataset] = load_dataset(config.dataset)
            record = run_experiment(config, data=data_cache[config.dataset])
            results.append({"run_id": name, "status": record.status, "record": record})
        except Exception as e:  # noqa: BLE001 - per-cell isolation is the contract
            log.exception("cell %s failed", name)
            results.append({"run_id": name, "status": "failed", "error": str(e)})
    return results
