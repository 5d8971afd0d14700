"""Figures for simulation and audit reports (non-interactive Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

from .audit import AuditReport  # noqa: E402
from .netsim import SimReport, parse_details  # noqa: E402

# fixed metadata keeps PNG bytes stable across runs
_SAVE = {"dpi": 100, "metadata": {"Software": None}}


def _style(ax):
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    ax.grid(alpha=0.3, linewidth=0.5)


def plot_commits(report: SimReport, path) -> None:
    """Chain height over time per validator, next to a commit-latency histogram."""
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 4))
    for nid in sorted(report.heights):
        ticks, heights = [0], [0]
        for e in report.events:
            if e.node == nid and e.kind in ("commit", "sync"):
                ticks.append(e.tick)
                heights.append(int(parse_details(e.details)["height"]))
        ticks.append(report.final_tick)
        heights.append(heights[-1])
        style = "-" if nid in report.honest else "--"
        left.step(ticks, heights, style, where="post", label=nid)
    for e in report.events:
        if e.kind in ("partition", "heal", "inject"):
            left.axvline(e.tick, color="grey", linewidth=0.7, linestyle=":")
    left.set_xlabel("tick")
    left.set_ylabel("committed height")
    left.set_title("commit progress")
    left.legend(fontsize=8, frameon=False)
    _style(left)

    latencies = sorted(report.commit_latencies.values())
    if latencies:
        bins = range(min(latencies), max(latencies) + 2)
        right.hist(latencies, bins=bins, color="tab:green", alpha=0.8)
    right.set_xlabel("submit-to-commit latency (ticks)")
    right.set_ylabel("transactions")
    right.yaxis.set_major_locator(MaxNLocator(integer=True))
    right.set_title(f"{len(latencies)} committed")
    _style(right)

    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def plot_control_coverage(report: AuditReport, path) -> None:
    fams = sorted(report.control_coverage)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(fams, [report.control_coverage[f] for f in fams], color="tab:blue")
    ax.set_ylabel("tagged events")
    ax.set_title(f"control coverage, ticks {report.period[0]}..{report.period[1]}")
    _style(ax)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
