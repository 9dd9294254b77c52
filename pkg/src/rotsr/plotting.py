"""Figures written next to the CSV/JSON outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .geometry import ScanGeometry, reconstruct_scatter  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def comparison_panel(path, raws: dict, geom: ScanGeometry, cmap: str = "hot"):
    """Raw images on the top row, their scan conversions underneath."""
    with plt.rc_context(STYLE):
        n = len(raws)
        fig, axes = plt.subplots(2, n, figsize=(2.4 * n, 4.8), squeeze=False)
        for j, (name, raw) in enumerate(raws.items()):
            rec, _ = reconstruct_scatter(raw, geom)
            axes[0, j].imshow(raw, cmap=cmap, vmin=0, vmax=1, interpolation="nearest")
            axes[0, j].set_title(name)
            axes[1, j].imshow(rec, cmap=cmap, vmin=0, vmax=1, interpolation="nearest")
            for ax in axes[:, j]:
                ax.set_xticks([])
                ax.set_yticks([])
        axes[0, 0].set_ylabel("raw (polar)")
        axes[1, 0].set_ylabel("reconstructed")
        _save(fig, path)


def loss_curve(path, history, window: int = 25):
    h = np.asarray(history, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        for col, label in ((1, "L_rec"), (2, "L_consis"), (3, "L_total")):
            y = h[:, col]
            if len(y) >= window:
                y = np.convolve(y, np.ones(window) / window, mode="valid")
                x = h[window - 1:, 0]
            else:
                x = h[:, 0]
            ax.plot(x, y, label=label, lw=1)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend(frameon=False)
        _save(fig, path)


def patch_probability_figure(path, lr: np.ndarray, grad_map: np.ndarray, probs: np.ndarray):
    """LR raw, normalized gradient map, per-window selection probability."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(7.5, 2.6))
        axes[0].imshow(lr, cmap="gray")
        axes[0].set_title("LR raw")
        axes[1].imshow(grad_map / max(grad_map.max(), 1e-12), cmap="gray")
        axes[1].set_title("gradient map")
        im = axes[2].imshow(probs, cmap="viridis")
        axes[2].set_title("window probability")
        fig.colorbar(im, ax=axes[2], fraction=0.046)
        for ax in axes:
            ax.set_xticks([])
            ax.set_yticks([])
        _save(fig, path)


def metric_bars(path, rows: list[dict], metrics=("psnr", "ssim")):
    """One bar group per report (``rows`` entries need ``label`` plus metric keys)."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 3), squeeze=False)
        labels = [r["label"] for r in rows]
        for ax, m in zip(axes[0], metrics):
            vals = [r[m] for r in rows]
            finite = [v for v in vals if np.isfinite(v)]
            ax.bar(range(len(vals)), [v if np.isfinite(v) else 0 for v in vals], color="0.4")
            ax.set_xticks(range(len(vals)))
            ax.set_xticklabels(labels, rotation=45, ha="right")
            ax.set_title(m.upper())
            if finite:
                lo, hi = min(finite), max(finite)
                pad = 0.1 * (hi - lo) + 1e-3
                ax.set_ylim(lo - pad, hi + pad)
        _save(fig, path)
