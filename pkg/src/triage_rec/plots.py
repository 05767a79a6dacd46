"""Figure rendering for report artifacts.

The evaluation core emits CSV/JSON only; these helpers draw the matching
matplotlib figures next to the delimited output when the CLI report path
asks for them.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_matrix_figure(results: list[dict], out_path: str) -> None:
    """Horizontal bar chart of mean test AUROC per experiment cell."""
    rows = [r for r in results if r.get("mean_auroc") is not None]
    if not rows:
        return
    labels = [
        f"{r['content']}-{r['classifier']}-{r['user_mode']}"
        f"{'' if r['similarity'] else ' (no sim)'} h={r['history_len']}"
        for r in rows
    ]
    means = np.array([r["mean_auroc"] for r in rows])
    errs = np.array([r.get("stddev") or 0.0 for r in rows])

    fig, ax = plt.subplots(figsize=(8, 0.5 * len(rows) + 1.6))
    y = np.arange(len(rows))
    ax.barh(y, means, xerr=errs, color="#4878a8", height=0.6)
    ax.set_yticks(y)
    ax.set_yticklabels(labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("test AUROC")
    lo = max(0.45, means.min() - 0.05)
    ax.set_xlim(lo, min(1.0, means.max() + 0.03))
    ax.axvline(0.5, color="gray", lw=0.8, ls="--")
    ax.grid(axis="x", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def render_contrast_histogram(rows: list[dict], out_path: str) -> None:
    """Per-class histogram of the positive-minus-negative similarity term."""
    fig, ax = plt.subplots(figsize=(7, 4))
    colors = {"replied": "#2a7e43", "not_replied": "#b3432b"}
    for cls in ("replied", "not_replied"):
        sub = [r for r in rows if r["class"] == cls]
        if not sub:
            continue
        centers = np.array([(r["bin_lo"] + r["bin_hi"]) / 2 for r in sub])
        counts = np.array([r["count"] for r in sub], dtype=np.float64)
        total = counts.sum()
        if total > 0:
            counts = counts / total
        width = sub[0]["bin_hi"] - sub[0]["bin_lo"]
        ax.bar(centers, counts, width=width, alpha=0.55,
               label=cls.replace("_", " "), color=colors[cls])
    ax.set_xlabel("similarity contrast (positive - negative)")
    ax.set_ylabel("fraction of class")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def render_history_sweep(results: list[dict], out_path: str) -> None:
    """AUROC as a function of history length, one line per model."""
    by_model: dict[str, list[tuple[int, float]]] = {}
    for r in results:
        if r.get("mean_auroc") is None:
            continue
        key = f"{r['content']}-{r['classifier']}-{r['user_mode']}"
        by_model.setdefault(key, []).append((r["history_len"], r["mean_auroc"]))
    if not by_model:
        return
    fig, ax = plt.subplots(figsize=(6.5, 4))
    for key, pts in sorted(by_model.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=key)
    ax.set_xlabel("history length")
    ax.set_ylabel("test AUROC")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
