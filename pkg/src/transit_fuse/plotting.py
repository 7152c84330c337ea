"""PNG renderings of report tables. Only the ``report`` command imports this."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .patterns import DistributionSummary  # noqa: E402

# no creation date or version in the file, so reruns are byte-identical
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_distribution(summary: DistributionSummary, path, xlabel: str, log_x: bool = False) -> Path:
    """Histogram with a dashed line at the mean."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if summary.n:
        edges = np.asarray(summary.bin_edges, dtype=float)
        ax.stairs(summary.counts, edges, fill=True, alpha=0.7)
        ax.axvline(summary.mean, ls="--", color="k", lw=1, label=f"mean {summary.mean:.2f}")
        ax.legend(frameon=False)
        if log_x:
            ax.set_xscale("log")
    else:
        ax.text(0.5, 0.5, "no samples", ha="center", va="center", transform=ax.transAxes)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    fig.tight_layout()
    return _save(fig, path)


def plot_scatter(x, y, slope: float, intercept: float, path, xlabel: str, ylabel: str) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    x = np.asarray(x, dtype=float)
    ax.scatter(x, y, s=12)
    if len(x):
        xs = np.linspace(0, x.max(), 2)
        sign = "-" if intercept < 0 else "+"
        ax.plot(xs, slope * xs + intercept, color="k", lw=1, label=f"y = {slope:.2f}x {sign} {abs(intercept):.1f}")
        ax.legend(frameon=False)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    return _save(fig, path)


def plot_importance(names, values, path, title: str, top: int = 12) -> Path:
    order = np.argsort(-np.asarray(values), kind="stable")[:top][::-1]
    fig, ax = plt.subplots(figsize=(5, 0.3 * len(order) + 1))
    ax.barh([names[k] for k in order], [values[k] for k in order])
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_pdp(curves: dict, path, ylabel: str) -> Path:
    """One panel per feature; ``curves`` maps feature name to [(grid, mean prediction)]."""
    n = max(len(curves), 1)
    cols = min(3, n)
    rows = -(-n // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.6 * rows), squeeze=False)
    for ax, (name, curve) in zip(axes.flat, curves.items()):
        g, v = zip(*curve)
        ax.plot(g, v, marker="." if len(g) == 1 else None)
        ax.set_xlabel(name)
        ax.set_ylabel(ylabel)
    for ax in list(axes.flat)[len(curves):]:
        ax.set_visible(False)
    fig.tight_layout()
    return _save(fig, path)
