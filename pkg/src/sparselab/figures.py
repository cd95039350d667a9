"""Figure rendering for report CSVs.

Each function takes the rows its report kind just wrote and renders one
PNG. Rewind runs draw solid/opaque, finetune runs transparent; method
colors are fixed across all figures.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .reports import LABELS

COLORS = {
    "l2_structured": "tab:blue",
    "l1_structured": "tab:orange",
    "l1_unstructured": "tab:green",
    "hybrid": "tab:red",
    "random_unstructured": "tab:purple",
    "random_structured": "tab:brown",
    "linf_structured": "tab:pink",
    "fc_only": "tab:gray",
}

plt.rcParams.update({
    "figure.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 8,
})


def _style(method, handling):
    return {
        "color": COLORS.get(method, "black"),
        "alpha": 0.45 if handling == "finetune" else 1.0,
        "linestyle": "--" if handling == "finetune" else "-",
    }


def _label(method, handling):
    lab = LABELS.get(method, method)
    return f"{lab} (finetune)" if handling == "finetune" else lab


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def _group_mean(rows, key_idx, x_idx, y_idx):
    """Group rows by key columns; return {key: (xs, mean_y, std_y)} over seeds."""
    buckets = {}
    for row in rows:
        key = tuple(row[i] for i in key_idx)
        buckets.setdefault(key, {}).setdefault(row[x_idx], []).append(row[y_idx])
    out = {}
    for key, series in buckets.items():
        xs = sorted(series)
        mean = np.array([np.mean(series[x]) for x in xs])
        std = np.array([np.std(series[x]) for x in xs])
        out[key] = (np.array(xs, dtype=float), mean, std)
    return out


def accuracy_figure(rows, path: Path) -> Path:
    # rows: method, handling, seed, iteration, acc, explicit, effective
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6), sharey=True)
    for xi, (ax, title) in enumerate(zip(axes, ("explicit", "effective"))):
        grouped = _group_mean(rows, key_idx=(0, 1), x_idx=3, y_idx=4)
        fracs = _group_mean(rows, key_idx=(0, 1), x_idx=3, y_idx=5 + xi)
        for key in grouped:
            xs_it, acc, std = grouped[key]
            _, frac, _ = fracs[key]
            st = _style(*key)
            ax.plot(frac, acc, marker="o", markersize=2.5, label=_label(*key), **st)
            ax.fill_between(frac, acc - std, acc + std, color=st["color"], alpha=0.15)
        ax.set_xlabel(f"fraction of weights pruned ({title})")
        ax.set_title(f"{title} sparsity")
    axes[0].set_ylabel("test accuracy (%)")
    axes[0].legend(loc="lower left")
    return _save(fig, path)


def distance_figure(rows, metric, reference, path: Path) -> Path:
    # rows: reference, method, seed, iteration, layer, distance
    layers = sorted({r[4] for r in rows})
    fig, axes = plt.subplots(1, len(layers), figsize=(2.6 * len(layers), 3.0), sharey=True)
    axes = np.atleast_1d(axes)
    for ax, layer in zip(axes, layers):
        sub = [r for r in rows if r[4] == layer]
        for (method,), (xs, mean, std) in _group_mean(sub, key_idx=(1,), x_idx=3, y_idx=5).items():
            st = _style(method, "rewind")
            ax.plot(xs, mean, label=LABELS.get(method, method), **st)
            ax.fill_between(xs, mean - std, mean + std, color=st["color"], alpha=0.15)
        ax.set_title(layer)
        ax.set_xlabel("pruning iteration")
    axes[0].set_ylabel(f"{metric} distance to {LABELS.get(reference, reference)}")
    axes[0].legend()
    return _save(fig, path)


def stability_figure(rows, path: Path) -> Path:
    # rows: method, handling, seed, layer, stability
    layers = sorted({r[3] for r in rows})
    keys = sorted({(r[0], r[1]) for r in rows})
    fig, ax = plt.subplots(figsize=(1.6 + 1.3 * len(layers), 3.4))
    width = 0.8 / len(keys)
    for j, key in enumerate(keys):
        means = []
        for layer in layers:
            vals = [r[4] for r in rows if (r[0], r[1]) == key and r[3] == layer]
            means.append(np.mean(vals))
        xs = np.arange(len(layers)) + (j - len(keys) / 2 + 0.5) * width
        st = _style(*key)
        ax.bar(xs, means, width=width, color=st["color"], alpha=st["alpha"], label=_label(*key))
    ax.set_xticks(np.arange(len(layers)))
    ax.set_xticklabels(layers)
    ax.set_ylabel("mean |w_i - w_(i-1)| over surviving weights")
    ax.legend(ncol=2)
    return _save(fig, path)


def structuredness_figure(rows, path: Path) -> Path:
    # rows: method, handling, seed, iteration, layer, dead_frac, pruned, expected
    layers = sorted({r[4] for r in rows})
    fig, axes = plt.subplots(1, len(layers), figsize=(3.4 * len(layers), 3.2), sharey=True)
    axes = np.atleast_1d(axes)
    for ax, layer in zip(axes, layers):
        sub = [r for r in rows if r[4] == layer]
        obs = _group_mean(sub, key_idx=(0, 1), x_idx=3, y_idx=5)
        exp = _group_mean(sub, key_idx=(0, 1), x_idx=3, y_idx=7)
        for key in obs:
            xs, mean, std = obs[key]
            st = _style(*key)
            ax.plot(xs, mean, marker="o", markersize=2.5, label=_label(*key), **st)
            ax.fill_between(xs, mean - std, mean + std, color=st["color"], alpha=0.15)
            ax.plot(exp[key][0], exp[key][1], linestyle=":", linewidth=1, color=st["color"])
        ax.set_title(f"{layer} (dotted: random-mask expectation)")
        ax.set_xlabel("pruning iteration")
    axes[0].set_ylabel("fraction of fully-dead input slices")
    axes[0].legend()
    return _save(fig, path)


def ensemble_figure(rows, path: Path) -> Path:
    # rows: iteration, seed, model, accuracy
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    for (model,), (xs, mean, std) in _group_mean(rows, key_idx=(2,), x_idx=0, y_idx=3).items():
        if model == "ensemble":
            ax.plot(xs, mean, color="black", linewidth=2.2, label="ensemble")
            ax.fill_between(xs, mean - std, mean + std, color="black", alpha=0.15)
        else:
            st = _style(model, "rewind")
            ax.plot(xs, mean, label=LABELS.get(model, model), **st)
    ax.set_xlabel("pruning iteration")
    ax.set_ylabel("test accuracy (%)")
    ax.legend(ncol=2, loc="lower left")
    return _save(fig, path)


def agreement_figure(methods, matrix, iteration, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(1.1 * len(methods) + 1.8, 1.1 * len(methods) + 1.2))
    im = ax.imshow(matrix, cmap="viridis")
    labels = [LABELS.get(m, m) for m in methods]
    ax.set_xticks(range(len(methods)))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_yticks(range(len(methods)))
    ax.set_yticklabels(labels)
    mid = (matrix.max() + matrix.min()) / 2
    for i in range(len(methods)):
        for j in range(len(methods)):
            ax.text(j, i, f"{matrix[i, j]:.0f}", ha="center", va="center", fontsize=7,
                    color="white" if matrix[i, j] < mid else "black")
    ax.set_title(f"prediction agreement, iteration {iteration}")
    ax.grid(False)
    fig.colorbar(im, ax=ax, shrink=0.8)
    return _save(fig, path)


def trajectories_figure(rows, layer, path: Path) -> Path:
    # rows: method, handling, seed, layer, coordinate, iteration, weight
    panels = sorted({(r[0], r[1], r[2]) for r in rows})
    fig, axes = plt.subplots(1, len(panels), figsize=(2.6 * len(panels), 3.0), sharey=True)
    axes = np.atleast_1d(axes)
    for ax, panel in zip(axes, panels):
        series = {}
        for r in rows:
            if (r[0], r[1], r[2]) == panel:
                series.setdefault(r[4], []).append((r[5], r[6]))
        for pts in series.values():
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts],
                    linewidth=0.4, alpha=0.35, color=COLORS.get(panel[0], "black"))
        ax.set_title(f"{_label(panel[0], panel[1])} s{panel[2]}", fontsize=8)
        ax.set_xlabel("pruning iteration")
    axes[0].set_ylabel(f"{layer} weight value after training")
    return _save(fig, path)


def mask_grid_figure(w_grid, mask_grid, layer, iteration, path: Path) -> Path:
    """Pruned weights gray, positive red, negative blue."""
    scale = np.abs(w_grid).max() or 1.0
    norm = np.clip(w_grid / scale, -1, 1)
    rgb = np.ones((*w_grid.shape, 3)) * 0.85  # gray background for pruned
    kept = mask_grid.astype(bool)
    pos = kept & (norm >= 0)
    neg = kept & (norm < 0)
    rgb[pos] = np.stack([np.ones(pos.sum()), 1 - norm[pos], 1 - norm[pos]], axis=1)
    rgb[neg] = np.stack([1 + norm[neg], 1 + norm[neg], np.ones(neg.sum())], axis=1)
    fig, ax = plt.subplots(figsize=(6, 6 * w_grid.shape[0] / w_grid.shape[1]))
    ax.imshow(rgb, interpolation="nearest")
    ax.set_title(f"{layer}, iteration {iteration}")
    ax.set_xticks([])
    ax.set_yticks([])
    ax.grid(False)
    return _save(fig, path)

