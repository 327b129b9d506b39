"""Figure rendering for the CLI's ``--figures`` option.

Each function takes the same rows the CSV writers emit and saves one PNG
(or any format matplotlib infers from the suffix). The Agg backend is forced,
so nothing here needs a display.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def cell_rate_bars(rows, path):
    """Grouped bars of the predicted preference rate per (user group, item group) cell, one panel per row."""
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to plot")
    fig, axes = plt.subplots(1, len(rows), figsize=(3.2 * len(rows), 3.0), sharey=True, squeeze=False)
    for ax, row in zip(axes[0], rows):
        cells = sorted(k for k in row.mean if k.startswith("rate_u"))
        users = sorted({int(k.split("_")[1][1:]) for k in cells})
        items = sorted({int(k.split("_")[2][1:]) for k in cells})
        width = 0.8 / max(len(items), 1)
        for b, item in enumerate(items):
            heights = [row.mean.get(f"rate_u{u}_i{item}", math.nan) for u in users]
            errs = [row.std.get(f"rate_u{u}_i{item}", 0.0) for u in users]
            ax.bar(np.arange(len(users)) + b * width, heights, width, yerr=errs, label=f"item group {item}")
        marginal = row.mean.get("rate_marginal")
        if marginal is not None and not math.isnan(marginal):
            ax.axhline(marginal, color="k", lw=0.8, ls="--")
        ax.set_xticks(np.arange(len(users)) + 0.4 - width / 2)
        ax.set_xticklabels([f"user group {u}" for u in users])
        ax.set_title(row.label)
        ax.set_ylim(0, 1)
    axes[0][0].set_ylabel("predicted preference rate")
    axes[0][-1].legend(fontsize="small")
    return _save(fig, path)


def sweep_heatmap(cells, path):
    """Mean unfair-model DEE over a two-parameter bias grid."""
    cells = list(cells)
    if not cells:
        raise ValueError("no sweep cells to plot")
    firsts = sorted({c.first for c in cells})
    seconds = sorted({c.second for c in cells})
    grid = np.full((len(seconds), len(firsts)), np.nan)
    for c in cells:
        grid[seconds.index(c.second), firsts.index(c.first)] = c.dee_mean
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(grid, origin="lower", cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(firsts)), [f"{v:g}" for v in firsts])
    ax.set_yticks(range(len(seconds)), [f"{v:g}" for v in seconds])
    axis = cells[0].axis
    ax.set_xlabel(f"{axis}0")
    ax.set_ylabel(f"{axis}1")
    fig.colorbar(im, ax=ax, label="DEE")
    return _save(fig, path)


def topk_lines(rows, path):
    """Ranking-DEE against K, one line per label, with std error bars."""
    rows = list(rows)
    if not rows:
        raise ValueError("no top-K rows to plot")
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for label in dict.fromkeys(r[0] for r in rows):
        pts = sorted((k, mean, std) for lab, k, mean, std in rows if lab == label)
        ks, means, stds = zip(*pts)
        ax.errorbar(ks, means, yerr=stds, marker="o", capsize=3, label=label)
    ax.set_xlabel("K")
    ax.set_ylabel("DEE (top-K)")
    ax.legend(fontsize="small")
    return _save(fig, path)
