"""Report figures rendered alongside the delimited outputs.

Everything draws through the Agg backend so headless runs work; figures
are written straight to files and never shown.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .feature_store import PixelMask
from .metrics import ScoredPixels, auroc, average_precision, pr_points, roc_points
from .segmentation import LikelihoodMap


def save_roc_pr_figure(data: ScoredPixels, path: str, title: str = "") -> None:
    """Two panels: ROC curve with AUROC, precision-recall curve with AP."""
    fpr, tpr = roc_points(data)
    recall, precision = pr_points(data)
    fig, (ax_roc, ax_pr) = plt.subplots(1, 2, figsize=(9, 4))
    ax_roc.plot(fpr, tpr, lw=1.5)
    ax_roc.plot([0, 1], [0, 1], ls="--", lw=0.8, color="grey")
    ax_roc.set_xlabel("false positive rate")
    ax_roc.set_ylabel("true positive rate")
    ax_roc.set_title(f"ROC (AUROC {auroc(data):.3f})")
    ax_pr.plot(recall, precision, lw=1.5)
    ax_pr.set_xlabel("recall")
    ax_pr.set_ylabel("precision")
    ax_pr.set_ylim(0, 1.02)
    ax_pr.set_title(f"Precision-recall (AP {average_precision(data):.3f})")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_layer_auroc_figure(aurocs: dict[str, float], path: str) -> None:
    """Horizontal bars comparing per-row AUROC values."""
    names = list(aurocs)
    values = [aurocs[name] for name in names]
    fig, ax = plt.subplots(figsize=(7, 0.5 + 0.45 * len(names)))
    bars = ax.barh(range(len(names)), values, color="steelblue")
    ax.set_yticks(range(len(names)), names)
    ax.invert_yaxis()
    ax.set_xlim(0, 1.0)
    ax.set_xlabel("AUROC")
    ax.bar_label(bars, fmt="%.3f", padding=3, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_likelihood_figure(lmap: LikelihoodMap, mask: PixelMask | None, path: str) -> None:
    """Foreground-evidence heatmap, optionally next to the ground truth."""
    panels = 2 if mask is not None else 1
    fig, axes = plt.subplots(1, panels, figsize=(4.5 * panels, 4))
    axes = np.atleast_1d(axes)
    shown = axes[0].imshow(lmap.values, cmap="magma")
    axes[0].set_title(f"foreground evidence {lmap.image_id}".strip())
    axes[0].axis("off")
    fig.colorbar(shown, ax=axes[0], fraction=0.046)
    if mask is not None:
        axes[1].imshow(mask.values, cmap="gray", vmin=0, vmax=1)
        axes[1].set_title("ground truth (white = background)")
        axes[1].axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_bench_figure(rows: dict[int, dict], path: str) -> None:
    """Grouped bars of per-layer scoring time for each estimator."""
    layers = sorted(rows)
    width = 0.38
    positions = np.arange(len(layers))
    fig, ax = plt.subplots(figsize=(7, 4))
    flow_ms = [rows[l].get("flow_ms", np.nan) for l in layers]
    knn_ms = [rows[l].get("knn_ms", np.nan) for l in layers]
    if not all(np.isnan(flow_ms)):
        ax.bar(positions - width / 2, flow_ms, width, label="flow")
    if not all(np.isnan(knn_ms)):
        ax.bar(positions + width / 2, knn_ms, width, label="knn")
    ax.set_xticks(positions, [f"layer {l}" for l in layers])
    ax.set_ylabel("scoring time per image [ms]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
