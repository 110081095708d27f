"""Static matplotlib figures for training curves, metric reports and latent optimization."""
from __future__ import annotations

import io
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .tensor.checkpoint import atomic_write_bytes  # noqa: E402

LOSS_KEYS = ("L_a", "L_b", "L_tb", "L_lt", "L_opt", "total")


def _save(fig, path):
    buf = io.BytesIO()
    fig.savefig(buf, format=path.rsplit(".", 1)[-1], dpi=120, bbox_inches="tight")
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())
    return path


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return math.nan


def plot_losses(history, path):
    """Loss terms per epoch (log scale) and validation reconstruction."""
    epochs = [_num(r["epoch"]) for r in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    for key in LOSS_KEYS:
        ys = [_num(r[key]) for r in history]
        if any(y > 0 for y in ys):
            ax1.plot(epochs, ys, label=key)
    ax1.set_yscale("log")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss (per molecule)")
    ax1.legend(fontsize=8)
    val = [(e, _num(r["val_reconstruction"])) for e, r in zip(epochs, history)]
    val = [(e, v) for e, v in val if not math.isnan(v)]
    if val:
        ax2.plot(*zip(*val), marker="o")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation reconstruction (%)")
    ax2.set_ylim(0, 100)
    return _save(fig, path)


def plot_report(report, path, title="metrics"):
    rows = report.rows()
    fig, ax = plt.subplots(figsize=(7, 3.5))
    names = [r[0] for r in rows]
    vals = [r[1] for r in rows]
    bars = ax.barh(names, vals, color="#4c72b0")
    for bar, (_, v, count) in zip(bars, rows):
        ax.text(min(v, 100) + 1, bar.get_y() + bar.get_height() / 2, f"{v:.1f}% ({count})",
                va="center", fontsize=8)
    ax.set_xlim(0, 125)
    ax.invert_yaxis()
    ax.set_xlabel("percent")
    ax.set_title(title)
    return _save(fig, path)


def plot_trajectories(trajectories, path, title="latent gradient ascent"):
    """``trajectories``: list of score lists, one per start."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for scores in trajectories:
        ax.plot(range(len(scores)), scores, alpha=0.5, lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("predicted property")
    ax.set_title(title)
    return _save(fig, path)
