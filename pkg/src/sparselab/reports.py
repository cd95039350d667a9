"""Report generation: CSV tables (and figures) from completed runs.

Every kind writes one tidy CSV; unless disabled, a matching PNG is
rendered next to it. Report output is a pure function of the persisted
run artifacts: regenerating a table from the same runs reproduces it
byte for byte.

Mask comparisons (jaccard/hamming) pair runs of identical seed, since
mask overlap between different seeds is meaningless under network
degeneracy; mixing seeds or architectures raises SelectionError.
"""

from __future__ import annotations

import glob as globlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .analytics import (
    agreement_matrix,
    ensemble_average,
    hamming_distance,
    jaccard_distance,
    stability_score,
)
from .data import load_dataset
from .errors import SelectionError
from .harness import RunRecord, resolve_architecture
from .network import predict_proba
from .persist import layer_names, load_checkpoint, load_masks
from .pruning import MaskSet, dead_slice_fraction

METHOD_ORDER = (
    "l2_structured",
    "l1_structured",
    "l1_unstructured",
    "hybrid",
    "random_unstructured",
    "random_structured",
    "linf_structured",
    "fc_only",
)

LABELS = {
    "l2_structured": "L2 S",
    "l1_structured": "L1 S",
    "l1_unstructured": "L1 US",
    "hybrid": "hybrid",
    "random_unstructured": "random US",
    "random_structured": "random S",
    "linf_structured": "Linf S",
    "fc_only": "fc-only",
}


@dataclass
class LoadedRun:
    record: RunRecord
    run_dir: Path

    def __post_init__(self):
        self.arch = resolve_architecture(self.record.config.architecture)
        self.names = layer_names(self.arch)

    @property
    def method(self) -> str:
        return self.record.config.method

    @property
    def handling(self) -> str:
        return self.record.config.handling

    @property
    def seed(self) -> int:
        return self.record.config.seed

    @property
    def iterations_done(self) -> int:
        return self.record.iterations_done

    def mask_set(self, k: int) -> MaskSet:
        return load_masks(self.run_dir / f"iter_{k:03d}" / "masks", self.arch)

    def net(self, k: int):
        return load_checkpoint(self.run_dir / f"iter_{k:03d}", "final", self.arch)["net"]


def _method_key(run: LoadedRun):
    order = (
        METHOD_ORDER.index(run.method) if run.method in METHOD_ORDER else len(METHOD_ORDER)
    )
    return (order, run.handling, run.seed)


def discover_runs(run_globs: Sequence[str]) -> List[LoadedRun]:
    dirs = []
    for pattern in run_globs:
        dirs.extend(globlib.glob(str(pattern)))
    runs = []
    for d in sorted(set(dirs)):
        d = Path(d)
        if (d / "record.json").exists():
            runs.append(LoadedRun(RunRecord.load(d), d))
    if not runs:
        raise SelectionError(f"no completed runs match {run_globs}")
    archs = {r.record.config.architecture for r in runs}
    datasets = {r.record.config.dataset for r in runs}
    if len(archs) > 1 or len(datasets) > 1:
        raise SelectionError(
            f"runs mix architectures {archs} or datasets {datasets}; compare like with like"
        )
    return sorted(runs, key=_method_key)


def _write_csv(path: Path, header: List[str], rows: List[List]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, float):
                cells.append(f"{v:.6f}")
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
    return path


def _tag(run: LoadedRun) -> str:
    return run.method if run.handling == "rewind" else f"{run.method}+{run.handling}"


def accuracy_report(runs: List[LoadedRun], out_dir: Path, figures: bool) -> List[Path]:
    header = [
        "method", "handling", "seed", "iteration",
        "test_accuracy", "explicit_fraction", "effective_fraction",
    ]
    rows = []
    for run in runs:
        rec = run.record
        for k, acc in enumerate(rec.accuracies):
            rows.append(
                [run.method, run.handling, run.seed, k, acc,
                 rec.explicit_fraction[k], rec.effective_fraction[k]]
            )
    written = [_write_csv(out_dir / "accuracy.csv", header, rows)]
    if figures:
        from . import figures as figs

        written.append(figs.accuracy_figure(rows, out_dir / "accuracy.png"))
    return written


def _common_seeds(a: LoadedRun, bs: List[LoadedRun]):
    return sorted({b.seed for b in bs} & {a.seed for a in [a]})


def mask_distance_report(
    runs: List[LoadedRun], out_dir: Path, figures: bool, reference: str, metric: str
) -> List[Path]:
    distance = jaccard_distance if metric == "jaccard" else hamming_distance
    refs = {r.seed: r for r in runs if r.method == reference and r.handling == "rewind"}
    if not refs:
        raise SelectionError(f"no rewind runs of reference method {reference!r}")
    others = [r for r in runs if r.method != reference and r.handling == "rewind"]
    header = ["reference", "method", "seed", "iteration", "layer", metric]
    rows = []
    for other in others:
        if other.seed not in refs:
            raise SelectionError(
                f"method {other.method} seed {other.seed} has no same-seed reference run; "
                "mask comparisons are only meaningful conditional on identical seed"
            )
        ref = refs[other.seed]
        upto = min(ref.iterations_done, other.iterations_done)
        for k in range(1, upto + 1):
            ma, mb = ref.mask_set(k), other.mask_set(k)
            for li, name in ref.names.items():
                rows.append(
                    [reference, other.method, other.seed, k, name,
                     distance(ma.layers[li], mb.layers[li])]
                )
    written = [_write_csv(out_dir / f"{metric}.csv", header, rows)]
    if figures:
        from . import figures as figs

        written.append(figs.distance_figure(rows, metric, reference, out_dir / f"{metric}.png"))
    return written


def rewind_vs_finetune_report(runs: List[LoadedRun], out_dir: Path, figures: bool) -> List[Path]:
    """Jaccard distance between rewind and finetune masks, same method+seed."""
    header = ["method", "seed", "iteration", "layer", "jaccard"]
    rows = []
    rew = {(r.method, r.seed): r for r in runs if r.handling == "rewind"}
    fin = {(r.method, r.seed): r for r in runs if r.handling == "finetune"}
    for key in sorted(set(rew) & set(fin), key=lambda k: (k[0], k[1])):
        a, b = rew[key], fin[key]
        upto = min(a.iterations_done, b.iterations_done)
        for k in range(1, upto + 1):
            ma, mb = a.mask_set(k), b.mask_set(k)
            for li, name in a.names.items():
                rows.append([key[0], key[1], k, name, jaccard_distance(ma.layers[li], mb.layers[li])])
    return [_write_csv(out_dir / "rewind_vs_finetune.csv", header, rows)]


def stability_report(runs: List[LoadedRun], out_dir: Path, figures: bool) -> List[Path]:
    header = ["method", "handling", "seed", "layer", "stability"]
    rows = []
    for run in runs:
        if run.iterations_done < 1:
            continue
        weight_seq, mask_seq = [], []
        for k in range(run.iterations_done + 1):
            weight_seq.append(run.net(k).weights)
            mask_seq.append(run.mask_set(k).layers)
        scores = stability_score(weight_seq, mask_seq)
        for li, name in run.names.items():
            rows.append([run.method, run.handling, run.seed, name, scores[li]])
    written = [_write_csv(out_dir / "stability.csv", header, rows)]
    if figures:
        from . import figures as figs

        written.append(figs.stability_figure(rows, out_dir / "stability.png"))
    return written


def structuredness_report(runs: List[LoadedRun], out_dir: Path, figures: bool) -> List[Path]:
    """Dead input-slice fraction per conv layer, with the analytic random
    -mask expectation at the same density for reference."""
    header = [
        "method", "handling", "seed", "iteration", "layer",
        "dead_slice_fraction", "pruned_fraction", "expected_random",
    ]
    rows = []
    for run in runs:
        conv_layers = [
            (li, name) for li, name in run.names.items()
            if run.arch.layers[li].kind == "conv2d"
        ]
        for k in range(run.iterations_done + 1):
            masks = run.mask_set(k)
            for li, name in conv_layers:
                mask = masks.layers[li]
                pruned = 1.0 - float(mask.sum()) / mask.size
                slice_size = mask.shape[0] * mask.shape[2] * mask.shape[3]
                rows.append(
                    [run.method, run.handling, run.seed, k, name,
                     dead_slice_fraction(mask, "conv2d"), pruned, pruned ** slice_size]
                )
    written = [_write_csv(out_dir / "structuredness.csv", header, rows)]
    if figures:
        from . import figures as figs

        written.append(figs.structuredness_figure(rows, out_dir / "structuredness.png"))
    return written


def _prediction_runs(runs: List[LoadedRun], members: Optional[Sequence[str]]):
    picked = [r for r in runs if r.handling == "rewind"]
    if members:
        picked = [r for r in picked if r.method in members]
    if not picked:
        raise SelectionError("no rewind runs match the requested ensemble members")
    return picked


def ensemble_report(
    runs: List[LoadedRun], out_dir: Path, figures: bool,
    members: Optional[Sequence[str]], iteration: Optional[int],
    data=None,
) -> List[Path]:
    picked = _prediction_runs(runs, members)
    seeds = sorted({r.seed for r in picked})
    methods = sorted({r.method for r in picked}, key=METHOD_ORDER.index)
    data = data or load_dataset(picked[0].record.config.dataset)
    images, labels = data.test.images, data.test.labels
    latest = min(r.iterations_done for r in picked)
    iters = [iteration] if iteration is not None else list(range(latest + 1))
    header = ["iteration", "seed", "model", "test_accuracy"]
    rows = []
    for k in iters:
        for seed in seeds:
            cell = {r.method: r for r in picked if r.seed == seed}
            if set(cell) != set(methods):
                raise SelectionError(f"seed {seed} lacks runs for some ensemble members")
            probs = []
            for m in methods:
                p = predict_proba(cell[m].net(k), images)
                probs.append(p)
                acc = 100.0 * float(np.mean(p.argmax(axis=1) == labels))
                rows.append([k, seed, m, acc])
            _, ens_acc = ensemble_average(probs, labels)
            rows.append([k, seed, "ensemble", ens_acc])
    written = [_write_csv(out_dir / "ensemble.csv", header, rows)]
    if figures:
        from . import figures as figs

        written.append(figs.ensemble_figure(rows, out_dir / "ensemble.png"))
    return written


def agreement_report(
    runs: List[LoadedRun], out_dir: Path, figures: bool,
    members: Optional[Sequence[str]], iteration: Optional[int],
    data=None,
) -> List[Path]:
    picked = _prediction_runs(runs, members)
    seeds = sorted({r.seed for r in picked})
    methods = sorted({r.method for r in picked}, key=METHOD_ORDER.index)
    data = data or load_dataset(picked[0].record.config.dataset)
    images = data.test.images
    k = iteration if iteration is not None else min(r.iterations_done for r in picked)
    total = np.zeros((len(methods), len(methods)), dtype=np.float64)
    for seed in seeds:
        cell = {r.method: r for r in picked if r.seed == seed}
        if set(cell) != set(methods):
            raise SelectionError(f"seed {seed} lacks runs for some agreement members")
        probs = [predict_proba(cell[m].net(k), images) for m in methods]
        total += agreement_matrix(probs)
    mean = total / len(seeds)
    header = ["method"] + methods
    rows = [[m] + [mean[i, j] for j in range(len(methods))] for i, m in enumerate(methods)]
    written = [_write_csv(out_dir / f"agreement_iter{k:03d}.csv", header, rows)]
    if figures:
        from . import figures as figs

        written.append(
            figs.agreement_figure(methods, mean, k, out_dir / f"agreement_iter{k:03d}.png")
        )
    return written


def trajectories_report(
    runs: List[LoadedRun], out_dir: Path, figures: bool, layer: Optional[str]
) -> List[Path]:
    """Raw per-weight values at the end of each stint (lines end at pruning)."""
    layer = layer or "conv2"
    max_coords = 2048
    header = ["method", "handling", "seed", "layer", "coordinate", "iteration", "weight"]
    rows = []
    for run in runs:
        li = {name: i for i, name in run.names.items()}.get(layer)
        if li is None:
            raise SelectionError(f"layer {layer!r} not in architecture")
        n = int(np.prod(run.arch.layers[li].weight_shape))
        coords = np.arange(n) if n <= max_coords else np.linspace(0, n - 1, max_coords, dtype=int)
        for k in range(run.iterations_done + 1):
            w = run.net(k).weights[li].ravel()
            kept = run.mask_set(k).layers[li].ravel()
            for c in coords:
                if kept[c]:
                    rows.append([run.method, run.handling, run.seed, layer, int(c), k, float(w[c])])
    written = [_write_csv(out_dir / f"trajectories_{layer}.csv", header, rows)]
    if figures:
        from . import figures as figs

        written.append(figs.trajectories_figure(rows, layer, out_dir / f"trajectories_{layer}.png"))
    return written


def inspect_mask(run_dir: Path, iteration: int, layer: str, out_dir: Path) -> List[Path]:
    """Dump one layer's mask and weight grids as CSV (plus a rendered view).

    Conv tensors are laid out as a (out_channels*kh) x (in_channels*kw)
    grid of kernel blocks, the way mask figures are usually shown.
    """
    run = LoadedRun(RunRecord.load(run_dir), Path(run_dir))
    li = {name: i for i, name in run.names.items()}.get(layer)
    if li is None:
        raise SelectionError(f"layer {layer!r} not in architecture")
    mask = run.mask_set(iteration).layers[li]
    w = run.net(iteration).weights[li]
    if mask.ndim == 4:
        oc, ic, kh, kw = mask.shape
        mask_grid = mask.transpose(0, 2, 1, 3).reshape(oc * kh, ic * kw)
        w_grid = w.transpose(0, 2, 1, 3).reshape(oc * kh, ic * kw)
    else:
        mask_grid, w_grid = mask, w
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{run.run_dir.name}_iter{iteration:03d}_{layer}"
    mask_path = out_dir / f"{stem}_mask.csv"
    np.savetxt(mask_path, mask_grid.astype(np.uint8), fmt="%d", delimiter=",")
    w_path = out_dir / f"{stem}_weights.csv"
    np.savetxt(w_path, w_grid, fmt="%.6e", delimiter=",")
    from . import figures as figs

    png = figs.mask_grid_figure(
        w_grid, mask_grid, layer, iteration, out_dir / f"{stem}.png"
    )
    return [mask_path, w_path, png]


def generate(
    kind: str,
    run_globs: Sequence[str],
    out_dir: Path,
    reference: str = "l2_structured",
    members: Optional[Sequence[str]] = None,
    iteration: Optional[int] = None,
    layer: Optional[str] = None,
    figures: bool = True,
    data=None,
) -> List[Path]:
    runs = discover_runs(run_globs)
    out_dir = Path(out_dir)
    if kind == "accuracy":
        return accuracy_report(runs, out_dir, figures)
    if kind == "jaccard":
        written = mask_distance_report(runs, out_dir, figures, reference, "jaccard")
        if any(r.handling == "finetune" for r in runs):
            written += rewind_vs_finetune_report(runs, out_dir, figures)
        return written
    if kind == "hamming":
        return mask_distance_report(runs, out_dir, figures, reference, "hamming")
    if kind == "stability":
        return stability_report(runs, out_dir, figures)
    if kind == "structuredness":
        return structuredness_report(runs, out_dir, figures)
    if kind == "ensemble":
        return ensemble_report(runs, out_dir, figures, members, iteration, data=data)
    if kind == "agreement":
        return agreement_report(runs, out_dir, figures, members, iteration, data=data)
    if kind == "trajectories":
        return trajectories_report(runs, out_dir, figures, layer)
    raise ValueError(f"unknown report kind {kind!r}")
