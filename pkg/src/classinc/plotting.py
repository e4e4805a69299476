"""Figures for weight-norm reports and confusion matrices.

Figures are rendered with the Agg canvas directly so nothing here touches
pyplot's global state.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

OLD_COLOR = "#1f77b4"
NEW_COLOR = "#d62728"


def _save(fig: Figure, path: Path) -> Path:
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=100)
    return path


def norms_figure(report, step: int) -> Figure:
    old = np.asarray(report.old_norms)
    new = np.asarray(report.new_norms)
    fig = Figure(figsize=(4.5, 3.2))
    ax = fig.add_subplot(111)
    x_old = np.arange(old.size)
    x_new = np.arange(old.size, old.size + new.size)
    if old.size:
        ax.plot(x_old, old, "o-", ms=3, lw=0.8, color=OLD_COLOR, label="old classes")
    ax.plot(x_new, new, "o-", ms=3, lw=0.8, color=NEW_COLOR, label="new classes")
    title = f"step {step}"
    if report.gamma is not None:
        title += f"  (gamma = {report.gamma:.3f})"
    ax.set_title(title, fontsize=10)
    ax.set_xlabel("class index")
    ax.set_ylabel("weight norm" if report.kind == "two_norm" else "weight 1-norm")
    ax.set_ylim(bottom=0)
    ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    return fig


def norm_plot(reports, out_dir) -> list:
    """Write ``norms_step<b>.png`` for each ``(step, NormReport)`` pair."""
    reports = list(reports)
    if not reports:
        raise ValueError("norm_plot needs at least one report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [_save(norms_figure(r, b), out_dir / f"norms_step{b}.png") for b, r in reports]


def confusion_figure(matrix, step: int, old_count: int) -> Figure:
    m = np.log1p(np.asarray(matrix, dtype=np.float64))
    fig = Figure(figsize=(4, 3.6))
    ax = fig.add_subplot(111)
    im = ax.imshow(m, cmap="viridis", interpolation="nearest")
    if 0 < old_count < m.shape[0]:
        # boundary between old and new classes
        for f in (ax.axhline, ax.axvline):
            f(old_count - 0.5, color="w", lw=0.6, ls="--")
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"step {step}: log(1 + count)", fontsize=10)
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    fig.tight_layout()
    return fig


def confusion_plot(steps, out_dir) -> list:
    """Write ``confusion_step<b>.png`` for each :class:`StepMetrics`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [_save(confusion_figure(m.confusion, m.step, m.old_classes), out_dir / f"confusion_step{m.step}.png")
            for m in steps]
