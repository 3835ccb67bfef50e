"""Figure rendering for CLI reports.

Every plotting command writes its PNG next to the delimited output it
illustrates, using the headless Agg backend so runs work in batch jobs
and containers without a display.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .grid import Field2D, SparseDepth


def save_pair_scatter(path: Union[str, Path], pairs: np.ndarray, title: str) -> None:
    """Scatter of normalized (w1, w2) pairs with the unit L1 ball outlined."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(pairs[:, 0], pairs[:, 1], s=2, alpha=0.25, linewidths=0)
    ball = np.array([[1, 0], [0, 1], [-1, 0], [0, -1], [1, 0]], dtype=float)
    ax.plot(ball[:, 0], ball[:, 1], "r--", linewidth=1, label="|w1|+|w2|=1")
    ax.set_xlabel("w1")
    ax.set_ylabel("w2")
    ax.set_title(title)
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8)
    lim = max(1.1, float(np.abs(pairs).max()) * 1.05)
    ax.set_xlim(-lim, lim)
    ax.set_ylim(-lim, lim)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_loss_curve(path: Union[str, Path], trace: np.ndarray, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(np.arange(len(trace)), trace)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_depth_panel(
    path: Union[str, Path],
    gt: Field2D,
    sparse: SparseDepth,
    refined: Field2D,
    title: str,
) -> None:
    """Side-by-side ground truth, sparse input, result, and error map."""
    fields = [gt.values, np.where(sparse.mask, sparse.depth.values, np.nan), refined.values]
    names = ["ground truth", "sparse input", "refined"]
    vmin = float(gt.values.min())
    vmax = float(gt.values.max())

    fig, axes = plt.subplots(1, 4, figsize=(14, 3.6))
    for ax, data, name in zip(axes[:3], fields, names):
        im = ax.imshow(data, vmin=vmin, vmax=vmax, cmap="viridis")
        ax.set_title(name)
        ax.axis("off")
        fig.colorbar(im, ax=ax, fraction=0.046)
    err = np.abs(refined.values - gt.values)
    im = axes[3].imshow(err, cmap="magma")
    axes[3].set_title("abs error (m)")
    axes[3].axis("off")
    fig.colorbar(im, ax=axes[3], fraction=0.046)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_ablation_bars(
    path: Union[str, Path],
    labels: Sequence[str],
    rmse_values: Sequence[float],
    title: str,
) -> None:
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(labels)), 4))
    pos = np.arange(len(labels))
    ax.bar(pos, rmse_values, color="tab:blue")
    ax.set_xticks(pos)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("RMSE (mm)")
    ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
