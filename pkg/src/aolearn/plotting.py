"""Report figures for the ``bench`` and ``risk-check`` commands.

Figures are rendered with the non-interactive Agg backend and written to
disk; nothing here opens a window.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["benchmark_figure", "risk_check_figure"]


def _save(fig, path) -> Path:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def benchmark_figure(rows, path, optimal_value: float | None = None, title: str | None = None) -> Path:
    """Per-replication values with mean +- sd for each benchmark row."""
    fig, ax = plt.subplots(figsize=(1.6 + 1.4 * len(rows), 4.0))
    rng = np.random.default_rng(0)  # jitter only; does not touch results
    for i, row in enumerate(rows):
        vals = np.asarray(row.values, dtype=float)
        if vals.size:
            ax.scatter(i + rng.uniform(-0.15, 0.15, vals.size), vals, s=8, alpha=0.35, color="0.45", lw=0)
        ax.errorbar(i, row.mean, yerr=row.sd, fmt="o", color="C0", capsize=5, ms=6, zorder=3)
    if optimal_value is not None:
        ax.axhline(optimal_value, color="C3", ls="--", lw=1, label=f"optimal value {optimal_value:.4g}")
        ax.legend(loc="lower right", frameon=False)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels([f"{r.method}\n{r.g}" for r in rows], fontsize=8)
    ax.set_xlim(-0.6, len(rows) - 0.4)
    ax.set_ylabel("value of estimated regime")
    ax.set_title(title or f"scenario {rows[0].scenario}, n = {rows[0].n}, p = {rows[0].p}" if rows else "")
    ax.spines[["top", "right"]].set_visible(False)
    return _save(fig, path)


def risk_check_figure(records, path) -> Path:
    """lhs against rhs of the excess-risk relation, one panel per loss."""
    losses = list(dict.fromkeys(r["loss"] for r in records))
    ncol = min(4, max(1, len(losses)))
    nrow = math.ceil(len(losses) / ncol)
    fig, axes = plt.subplots(nrow, ncol, figsize=(3.2 * ncol, 3.0 * nrow), squeeze=False)
    for ax, loss in zip(axes.ravel(), losses):
        sub = [r for r in records if r["loss"] == loss]
        lhs = np.array([r["lhs"] for r in sub])
        rhs = np.array([r["rhs"] for r in sub])
        bad = ~np.array([r["holds"] for r in sub], dtype=bool)
        if len(sub) > 5000:
            keep = np.random.default_rng(0).choice(len(sub), 5000, replace=False)
            keep = np.union1d(keep, np.flatnonzero(bad))
        else:
            keep = np.arange(len(sub))
        ax.scatter(rhs[keep], lhs[keep], s=3, alpha=0.4, color="C0", lw=0)
        if bad.any():
            ax.scatter(rhs[bad], lhs[bad], s=10, color="C3", label=f"{int(bad.sum())} violations")
            ax.legend(frameon=False, fontsize=8)
        top = max(float(rhs.max(initial=0.0)), float(lhs.max(initial=0.0)), 1e-12)
        ax.plot([0, top], [0, top], color="k", lw=0.8, ls="--")
        ax.set_title(loss, fontsize=10)
        ax.set_xlabel("rhs", fontsize=8)
        ax.set_ylabel("lhs", fontsize=8)
    for ax in axes.ravel()[len(losses):]:
        ax.set_visible(False)
    fig.tight_layout()
    return _save(fig, path)
