"""Report figures rendered to PNG files.

All rendering uses the Agg backend so the CLI works headless.  Each
function takes data already computed elsewhere and owns only layout.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .evaluation import PARTS, ScoreReport  # noqa: E402


def plot_loss_curve(metrics_path, out_path) -> None:
    """Render the training metrics TSV as loss and learning-rate curves."""
    steps, l_h, l_b, total, lrs = [], [], [], [], []
    lines = Path(metrics_path).read_text(encoding="utf-8").splitlines()
    for line in lines[1:]:
        parts = line.split("\t")
        steps.append(int(parts[0]))
        l_h.append(float(parts[1]))
        l_b.append(float(parts[2]))
        total.append(float(parts[3]))
        lrs.append(float(parts[4]))
    fig, ax = plt.subplots(figsize=(7, 4.2))
    ax.plot(steps, total, label="total", color="black", linewidth=1.6)
    ax.plot(steps, l_h, label="header", color="tab:blue", linewidth=1.0)
    ax.plot(steps, l_b, label="body", color="tab:orange", linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right")
    ax2 = ax.twinx()
    ax2.plot(steps, lrs, color="tab:green", linewidth=0.8, alpha=0.5)
    ax2.set_ylabel("learning rate", color="tab:green")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_f1_bars(report: ScoreReport, out_path) -> None:
    """Grouped bars: exact and chrF F1 per table part."""
    x = range(len(PARTS))
    exact = [report.exact[p].f1 for p in PARTS]
    chrf = [report.chrf[p].f1 for p in PARTS]
    width = 0.38
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([i - width / 2 for i in x], exact, width, label="exact")
    ax.bar([i + width / 2 for i in x], chrf, width, label="chrF")
    for i, v in enumerate(exact):
        ax.text(i - width / 2, v + 1, f"{v:.1f}", ha="center", fontsize=8)
    for i, v in enumerate(chrf):
        ax.text(i + width / 2, v + 1, f"{v:.1f}", ha="center", fontsize=8)
    ax.set_xticks(list(x))
    ax.set_xticklabels([p.replace("_", " ") for p in PARTS])
    ax.set_ylim(0, 112)
    ax.set_ylabel("F1")
    ax.set_title(f"error rate {report.error_rate:.2f}% over {report.n_tables} tables")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_speedup(
    rows: Sequence[int],
    set_steps: Sequence[float],
    baseline_steps: Sequence[float],
    out_path,
) -> None:
    """Step counts of parallel-row decoding vs full serialization.

    Inputs are aligned per-instance samples; the figure shows per-row-count
    means and the resulting speedup ratio.
    """
    groups = {}
    for r, s, b in zip(rows, set_steps, baseline_steps):
        groups.setdefault(r, []).append((s, b))
    counts = sorted(groups)
    mean_set = [sum(s for s, _ in groups[c]) / len(groups[c]) for c in counts]
    mean_base = [sum(b for _, b in groups[c]) / len(groups[c]) for c in counts]
    ratios = [b / s if s else float("nan") for s, b in zip(mean_set, mean_base)]
    fig, (ax, ax_r) = plt.subplots(1, 2, figsize=(9, 4))
    ax.plot(counts, mean_base, marker="o", label="sequence baseline")
    ax.plot(counts, mean_set, marker="s", label="parallel rows")
    ax.set_xlabel("body rows")
    ax.set_ylabel("sequential steps")
    ax.legend()
    ax_r.plot(counts, ratios, marker="d", color="tab:red")
    ax_r.set_xlabel("body rows")
    ax_r.set_ylabel("speedup (baseline / parallel)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
