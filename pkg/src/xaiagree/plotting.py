"""Static figures written next to the CSV exports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .attribution import METHOD_LABELS  # noqa: E402

RC = {
    "font.size": 8,
    "axes.labelsize": 8,
    "axes.titlesize": 8,
    "xtick.labelsize": 6,
    "ytick.labelsize": 6,
    "figure.dpi": 100,
    "savefig.dpi": 100,
}
# no timestamps or version strings, so reruns produce identical bytes
PNG_METADATA = {"Software": None}


def _label(method: str) -> str:
    return METHOD_LABELS.get(method, method)


def _save(fig, path) -> None:
    fig.savefig(path, metadata=PNG_METADATA)
    plt.close(fig)


def auc_curve(path, epochs) -> None:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 2.6))
        ax.plot([r.epoch for r in epochs], [r.test_auc for r in epochs], label="test")
        ax.plot([r.epoch for r in epochs], [r.val_auc for r in epochs], label="validation",
                linestyle="--")
        ax.set_xlabel("epoch")
        ax.set_ylabel("AUC")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def agreement_boxplots(path, grid, metric: str) -> None:
    """One panel per k; one box per method pair over test instances."""
    i = grid.metrics.index(metric)
    n = len(grid.ks)
    ncols = min(4, n)
    nrows = -(-n // ncols)
    labels = [f"{_label(a)} / {_label(b)}" for a, b in grid.pairs]
    with plt.rc_context(RC):
        fig, axes = plt.subplots(nrows, ncols,
                                 figsize=(3.2 * ncols, 0.12 * len(labels) * nrows + 1),
                                 squeeze=False, sharey=True, layout="constrained")
        for j, k in enumerate(grid.ks):
            ax = axes[j // ncols][j % ncols]
            ax.boxplot(list(grid.values[i, j]), orientation="horizontal", widths=0.6,
                       flierprops={"markersize": 2})
            ax.set_yticks(range(1, len(labels) + 1), labels)
            ax.set_xlim(-0.05, 1.05)
            ax.set_title(f"{metric}, k={k}")
        for j in range(n, nrows * ncols):
            axes[j // ncols][j % ncols].axis("off")
        fig.suptitle(f"{metric} per method pair, epoch {grid.epoch}")
        _save(fig, path)


def agreement_heatmaps(path, summaries) -> None:
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(summaries), figsize=(4.4 * len(summaries), 4.0),
                                 squeeze=False, layout="constrained")
        for ax, s in zip(axes[0], summaries):
            im = ax.imshow(s.pair_matrix, vmin=0, vmax=1, cmap="viridis")
            names = [_label(m) for m in s.methods]
            ax.set_xticks(range(len(names)), names, rotation=90)
            ax.set_yticks(range(len(names)), names)
            for (r, c), v in np.ndenumerate(s.pair_matrix):
                ax.text(c, r, f"{v:.2f}", ha="center", va="center", fontsize=5,
                        color="white" if v < 0.5 else "black")
            ax.set_title(f"{s.metric}, k={s.k}, epoch {s.epoch}")
        for ax in axes[0][1:]:
            ax.set_yticks(range(len(names)), [])
        fig.colorbar(im, ax=list(axes[0]), shrink=0.8)
        _save(fig, path)


def correlation_grid(path, reports, metrics, ks) -> None:
    """Mean agreement (x) against AUC (y); columns are metrics, rows are k."""
    cells = {(r.metric, r.k): r for r in reports}
    with plt.rc_context(RC):
        fig, axes = plt.subplots(len(ks), len(metrics),
                                 figsize=(2.2 * len(metrics), 1.6 * len(ks)),
                                 squeeze=False, sharey=True)
        for row, k in enumerate(ks):
            for col, metric in enumerate(metrics):
                ax = axes[row][col]
                r = cells[(metric, k)]
                ax.scatter([p[2] for p in r.points], [p[1] for p in r.points], s=4)
                ax.set_xlim(-0.05, 1.05)
                rho = "undefined" if r.rho is None else f"{r.rho:.2f}"
                ax.set_title(f"{metric}, k={k}, rho={rho}")
                if row == len(ks) - 1:
                    ax.set_xlabel("agreement")
                if col == 0:
                    ax.set_ylabel("AUC")
        fig.tight_layout()
        _save(fig, path)
