"""Report figures, rendered off-screen with the Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib.figure import Figure
from matplotlib.colors import TwoSlopeNorm

from .experiments import ConsistencyResult, CorrelationMatrix, RankingResult, SensitivityResult

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
_PNG_META = {"Software": None}


def _figure(width: float = 5.0, height: float = 3.2, ncols: int = 1):
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(width, height), layout="constrained")
        axes = fig.subplots(1, ncols, squeeze=False)[0]
    return fig, axes


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    return path


def plot_sensitivity(result: SensitivityResult, path) -> Path:
    """Per-group scores as points, the mean as a dashed line, +-1 std shaded."""
    summary = result.summary()
    metrics = list(dict.fromkeys(m for _, m in summary))
    disturbances = list(dict.fromkeys(d for d, _ in summary))
    fig, axes = _figure(3.0 * len(metrics), 3.2, len(metrics))
    xs = np.arange(len(disturbances))
    for ax, metric in zip(axes, metrics):
        means = np.array([summary[(d, metric)][0] for d in disturbances])
        stds = np.array([summary[(d, metric)][1] for d in disturbances])
        for i, d in enumerate(disturbances):
            pts = result.scores(d, metric)
            ax.plot(np.full(len(pts), xs[i]), pts, "o", ms=3, alpha=0.5, color="C0")
        ax.plot(xs, means, "--", color="C3", label="mean")
        ax.fill_between(xs, means - stds, means + stds, color="C3", alpha=0.2, label="std")
        ax.set_xticks(xs, [d.split(":")[0] for d in disturbances], rotation=30, ha="right")
        ax.set_title(metric.upper())
        ax.set_ylabel("score")
    axes[0].legend()
    return _save(fig, path)


def plot_consistency(result: ConsistencyResult, path) -> Path:
    fig, axes = _figure()
    ax = axes[0]
    for metric, scores in result.scores.items():
        ax.plot(result.ladder, scores, "o-", label=metric.upper())
    ax.set_xlabel(f"{result.kind} alpha")
    ax.set_ylabel("score")
    ax.legend()
    return _save(fig, path)


def plot_ranking(result: RankingResult, path) -> Path:
    """Score per model for every metric, models placed in the first metric's order."""
    metrics = list(result.metrics)
    fig, axes = _figure(3.0 * len(metrics), 3.0, len(metrics))
    for ax, metric in zip(axes, metrics):
        entry = result.metrics[metric]
        order = entry["order"]
        ax.bar(range(len(order)), [entry["scores"][m] for m in order], color="C0")
        ax.set_xticks(range(len(order)), order)
        title = metric.upper()
        if entry["r_defined"]:
            title += f"  r={entry['pearson_r']:.3f}"
        ax.set_title(title)
    return _save(fig, path)


def plot_correlation(matrix: CorrelationMatrix, path) -> Path:
    n = len(matrix.names)
    fig, axes = _figure(1.0 + 0.7 * n, 0.8 + 0.7 * n)
    ax = axes[0]
    im = ax.imshow(np.ma.masked_invalid(matrix.r), cmap="RdBu_r", vmin=-1, vmax=1)
    ax.set_xticks(range(n), matrix.names, rotation=45, ha="right")
    ax.set_yticks(range(n), matrix.names)
    for i in range(n):
        for j in range(n):
            v = matrix.r[i, j]
            ax.text(j, i, "n/a" if np.isnan(v) else f"{v:.2f}", ha="center", va="center",
                    fontsize=7)
    fig.colorbar(im, ax=ax, shrink=0.8)
    return _save(fig, path)


def plot_attention(image: np.ndarray, heat: np.ndarray, path) -> Path:
    """Grayscale image with a diverging heatmap overlay centred at zero."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img[..., 0] if img.shape[2] == 1 else img
    fig, axes = _figure(3.0, 3.0)
    ax = axes[0]
    ax.imshow((img + 1.0) / 2.0, cmap="gray", vmin=0, vmax=1)
    bound = float(np.max(np.abs(heat))) or 1.0
    ax.imshow(heat, cmap="RdBu_r", norm=TwoSlopeNorm(0.0, -bound, bound), alpha=0.5)
    ax.set_axis_off()
    return _save(fig, path)


def plot_images(images: Sequence[np.ndarray], path, ncols: int = 8) -> Path:
    """Contact sheet of [-1, 1] images."""
    n = len(images)
    nrows = (n + ncols - 1) // ncols
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(1.1 * ncols, 1.1 * nrows))
        axes = np.atleast_1d(fig.subplots(nrows, ncols, squeeze=False)).ravel()
    for ax in axes:
        ax.set_axis_off()
    for ax, img in zip(axes, images):
        arr = np.asarray(img)
        ax.imshow((arr[..., 0] if arr.ndim == 3 and arr.shape[2] == 1 else arr) * 0.5 + 0.5,
                  cmap="gray", vmin=0, vmax=1)
    return _save(fig, path)


def plot_loss(history: Sequence[float], path) -> Path:
    fig, axes = _figure()
    ax = axes[0]
    ax.plot(np.arange(len(history)), history)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    return _save(fig, path)
