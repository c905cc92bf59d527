"""Report figures. Uses the non-interactive Agg backend and only writes files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def loss_curve(history: list, path, smooth: int = 50) -> Path:
    """Total loss per step plus a running mean, log scale."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        total = np.array([h["total"] for h in history])
        steps = np.arange(len(total))
        ax.plot(steps, total, lw=0.5, alpha=0.4, color="tab:blue", label="total")
        if len(total) >= smooth:
            run = np.convolve(total, np.ones(smooth) / smooth, mode="valid")
            ax.plot(steps[smooth - 1 :], run, color="tab:blue", label=f"mean of {smooth}")
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        return _save(fig, path)


def metric_bars(report: dict, path) -> Path:
    """Horizontal bars for each scalar metric (NaN entries skipped)."""
    items = [(k, v) for k, v in report.items() if isinstance(v, (int, float)) and np.isfinite(v)]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 0.35 * max(len(items), 1) + 0.8))
        names = [k for k, _ in items]
        ax.barh(range(len(items)), [v for _, v in items], color="tab:gray")
        ax.set_yticks(range(len(items)), names)
        ax.invert_yaxis()
        for i, (_, v) in enumerate(items):
            ax.text(v, i, f" {v:.3g}", va="center")
        return _save(fig, path)


def root_paths(preds: list, gts: list, goals: list, path, root: int = 0) -> Path:
    """Top-down (x, z) root trajectories of predictions against ground truth."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 4))
        for i, (p, g) in enumerate(zip(preds, gts)):
            ax.plot(g[:, root, 0], g[:, root, 2], color="0.6", lw=1, label="ground truth" if i == 0 else None)
            ax.plot(p[:, root, 0], p[:, root, 2], color="tab:orange", lw=1, label="sampled" if i == 0 else None)
        pts = [np.asarray(g) for g in goals if g is not None]
        if pts:
            pts = np.stack(pts)
            ax.scatter(pts[:, 0], pts[:, 2], marker="x", color="k", s=15, label="goal")
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("z [m]")
        ax.legend(frameon=False)
        return _save(fig, path)
