"""Report figures rendered to PNG next to the CSV outputs (non-interactive Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def figsize(scale: float = 1.0, aspect: float = 0.618) -> tuple[float, float]:
    width = 6.0 * scale
    return width, width * aspect


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_histograms(path, report) -> Path:
    """Truth vs initial vs final smooth histograms (one panel per generated model)."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=figsize(1.2, 0.4), sharey=True)
        for ax, probs, name, emd in (
            (axes[0], report.initial, "initial", report.emd_initial),
            (axes[1], report.final, "final", report.emd_final),
        ):
            ax.fill_between(report.centers, report.truth, color="0.8", label="truth", step="mid")
            ax.plot(report.centers, probs, color="C3" if name == "initial" else "C0", lw=1.0, label=name)
            ax.set_title(f"{name} output, EMD {emd:.4f}")
            ax.set_xlabel("intensity")
            ax.set_yscale("log")
            ax.set_ylim(bottom=1e-6)
            ax.legend(frameon=False)
        axes[0].set_ylabel("probability")
        return _save(fig, path)


def plot_eval(path, speckle: np.ndarray, truth: np.ndarray, pred: np.ndarray, scores: np.ndarray) -> Path:
    """Grid of (speckle, truth, reconstruction) rows plus the SSIM distribution."""
    n = min(len(pred), 6)
    with plt.rc_context(STYLE):
        fig = plt.figure(figsize=(6.0, 1.1 * n + 1.6))
        grid = fig.add_gridspec(n + 1, 3, height_ratios=[1.0] * n + [1.4])
        for i in range(n):
            for j, (img, title) in enumerate(((speckle[i], "speckle"), (truth[i], "truth"), (pred[i], "reconstruction"))):
                ax = fig.add_subplot(grid[i, j])
                ax.imshow(img, cmap="gray", vmin=0, vmax=1, interpolation="nearest")
                ax.set_xticks([])
                ax.set_yticks([])
                if i == 0:
                    ax.set_title(title)
            fig.axes[-1].set_ylabel(f"{scores[i]:.3f}", rotation=0, labelpad=18, va="center")
        ax = fig.add_subplot(grid[n, :])
        ax.hist(scores, bins=30, color="C0")
        ax.axvline(scores.mean(), color="k", lw=0.8)
        ax.set_xlabel(f"SSIM (mean {scores.mean():.4f}, n = {len(scores)})")
        ax.set_ylabel("records")
        return _save(fig, path)


def plot_losses(path, rows: Sequence[dict], columns=("L_Dis", "L_adv", "L_MI", "L_SSIM", "L_L1", "L_Gen")) -> Path:
    """Per-step loss traces with the validation SSIM on a second axis."""
    steps = np.array([r["step"] for r in rows], dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(1.0))
        for c in columns:
            vals = np.array([r[c] for r in rows], dtype=float)
            if np.any(vals != 0):
                ax.plot(steps, vals, lw=0.8, label=c)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(frameon=False, ncol=3)
        val = np.array([r["val_ssim"] for r in rows], dtype=float)
        ok = np.isfinite(val)
        if ok.any():
            ax2 = ax.twinx()
            ax2.plot(steps[ok], val[ok], "ko-", ms=3, lw=0.8)
            ax2.set_ylabel("validation SSIM")
        return _save(fig, path)


def plot_comparison(path, table: Sequence[dict]) -> Path:
    """Mean test SSIM per preset and variant, one marker per seed."""
    presets = list(dict.fromkeys(r["preset"] for r in table))
    variants = list(dict.fromkeys(r["variant"] for r in table))
    width = 0.8 / max(len(variants), 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(1.0))
        for j, v in enumerate(variants):
            for i, p in enumerate(presets):
                vals = [r["mean_ssim"] for r in table if r["preset"] == p and r["variant"] == v]
                x = i + (j - (len(variants) - 1) / 2) * width
                ax.bar(x, np.mean(vals), width * 0.9, color=f"C{j}", label=v if i == 0 else None)
                ax.plot([x] * len(vals), vals, "k.", ms=4)
        ax.set_xticks(range(len(presets)))
        ax.set_xticklabels(presets)
        ax.set_ylabel("mean test SSIM")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_speckle_stats(path, frames: np.ndarray, report) -> Path:
    """Mean-scaled intensity histogram against the exponential density."""
    f = np.asarray(frames, dtype=np.float64)
    f = f.reshape(-1, f.shape[-1])
    x = (f / f.mean(axis=1, keepdims=True)).ravel()
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(0.8))
        ax.hist(x, bins=100, range=(0, 8), density=True, color="0.7", label="intensity / mean")
        grid = np.linspace(0, 8, 200)
        ax.plot(grid, np.exp(-grid), "C3", lw=1.0, label="exp(-x)")
        ax.set_yscale("log")
        ax.set_xlabel("normalized intensity")
        ax.set_ylabel("density")
        ax.set_title(f"KS {report.ks_distance_exponential:.4f}, contrast {report.contrast:.3f}, n = {report.n_samples}")
        ax.legend(frameon=False)
        return _save(fig, path)
