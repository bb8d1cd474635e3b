"""Static report figures written next to the delimited output."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_report_figure(rows: list[dict], path: str) -> None:
    """Two-panel operating-characteristics summary for a list of report rows.

    Left: average stage-2 sample size per scenario (conditional average
    overlaid when present). Right: overall and stage-1 power. Saved without
    volatile metadata so repeated runs produce identical files.
    """
    labels = [f"{r.get('label') or r.get('theta')}:{r.get('rule')}" for r in rows]
    avg_n2 = [float(r["Avg. n2"]) if r["Avg. n2"] else math.nan for r in rows]
    n2_pos = [float(r["Avg n2|n2>0"]) if r["Avg n2|n2>0"] else math.nan for r in rows]
    power = [float(r["Avg. power Overall"]) if r["Avg. power Overall"] else math.nan
             for r in rows]
    stage1 = [float(r["Avg. power Stage 1"]) if r["Avg. power Stage 1"] else math.nan
              for r in rows]
    x = range(len(rows))

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4.2))
    ax1.bar(x, avg_n2, color="#4878a8", label="avg n2")
    if any(not math.isnan(v) for v in n2_pos):
        ax1.plot(x, n2_pos, "o--", color="#b4543c", label="avg n2 | n2>0")
    ax1.set_ylabel("stage-2 sample size (total)")
    ax1.legend(frameon=False, fontsize=8)
    ax2.plot(x, power, "o-", color="#4878a8", label="overall power")
    ax2.plot(x, stage1, "s--", color="#6aa84f", label="stage-1 power")
    ax2.set_ylim(0.0, 1.05)
    ax2.set_ylabel("rejection rate")
    ax2.legend(frameon=False, fontsize=8)
    for ax in (ax1, ax2):
        ax.set_xticks(list(x))
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata={})
    plt.close(fig)
