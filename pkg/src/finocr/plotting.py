"""Report figures written next to the CSV/JSON outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata keeps PNG output byte-stable across runs
_SAVE_KW = {"dpi": 120, "metadata": {"Software": None}}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def plot_correlations(rho: dict, path, title="Correlation with TEDS"):
    """Horizontal bars of per-attribute correlation, strongest at the top."""
    cols = sorted(rho, key=lambda c: abs(rho[c]))
    fig, ax = plt.subplots(figsize=(6, 0.45 * max(len(cols), 1) + 1.2))
    values = [rho[c] for c in cols]
    ax.barh(cols, values, color=["#c0392b" if v < 0 else "#2471a3" for v in values])
    ax.axvline(0, color="black", lw=0.8)
    ax.set_xlim(-1, 1)
    ax.set_xlabel("Pearson correlation")
    ax.set_title(title)
    for y, v in enumerate(values):
        ax.text(v + (0.02 if v >= 0 else -0.02), y, f"{v:.3f}", va="center",
                ha="left" if v >= 0 else "right", fontsize=8)
    return _finish(fig, path)


def plot_difficulty(scores: dict, bounds: dict, path):
    """Histogram of difficulty scores with the stage cut points."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    values = sorted(scores.values())
    ax.hist(values, bins=min(30, max(5, len(values) // 2)), color="#7f8c8d", edgecolor="white")
    for stage, color in (("easy", "#27ae60"), ("mid", "#e67e22")):
        ax.axvline(bounds[stage][1], color=color, ls="--", label=f"{stage} upper bound")
    ax.set_xlabel("difficulty d(x)")
    ax.set_ylabel("samples")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_table_scores(per_table: list, path):
    """Per-table TEDS and TEDS-S as grouped bars (values in [0, 100])."""
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(per_table) + 2), 3.5))
    xs = range(len(per_table))
    ax.bar([x - 0.2 for x in xs], [100 * t["teds"] for t in per_table], width=0.4, label="TEDS")
    ax.bar([x + 0.2 for x in xs], [100 * t["teds_s"] for t in per_table], width=0.4, label="TEDS-S")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([t["id"] for t in per_table], rotation=45, ha="right", fontsize=7)
    ax.set_ylim(0, 105)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_iou_recall(report, path):
    """Fraction of cells at or above each IoU threshold, with mean/median markers."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    grid = [i / 100 for i in range(101)]
    ious = report.per_cell_iou
    ax.plot(grid, [sum(v >= t for v in ious) / len(ious) for t in grid], color="#2471a3")
    ax.scatter(list(report.recall_at), list(report.recall_at.values()), color="#c0392b", zorder=3)
    ax.axvline(report.mean_iou, color="gray", ls=":", label=f"mean {report.mean_iou:.3f}")
    ax.axvline(report.median_iou, color="gray", ls="--", label=f"median {report.median_iou:.3f}")
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("cell recall")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    return _finish(fig, path)
