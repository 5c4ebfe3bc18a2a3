"""Report figures rendered to files next to the CSV/JSON outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import FAULT_GROUPS, ComparisonTable, RunDistribution

_DPI = 150


def cdf_figure(curves: dict[str, list[tuple[float, float]]], path: str,
               xmax_pct: float | None = None) -> None:
    """Step CDFs of absolute errors for one or more methods."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for label, points in curves.items():
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        ax.step([0.0] + xs, [0.0] + ys, where="post", label=label)
    ax.set_xlabel("absolute error (% of line length)")
    ax.set_ylabel("cumulative fraction of scenarios")
    ax.set_ylim(0.0, 1.02)
    if xmax_pct is not None:
        ax.set_xlim(0.0, xmax_pct)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def error_boxplot_figure(errors_by_method: dict[str, dict[str, list[float]]],
                         path: str, log_scale: bool = True) -> None:
    """Grouped boxplots of per-scenario errors, one cluster per fault group."""
    methods = list(errors_by_method)
    groups = [*FAULT_GROUPS, "ALL"]
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(7.2, 4.2))
    for mi, method in enumerate(methods):
        data, positions = [], []
        for gi, group in enumerate(groups):
            vals = errors_by_method[method].get(group, [])
            if vals:
                data.append(vals)
                positions.append(gi + (mi - (len(methods) - 1) / 2) * width)
        if not data:
            continue
        bp = ax.boxplot(data, positions=positions, widths=width * 0.9,
                        showfliers=False, patch_artist=True)
        color = f"C{mi}"
        for box in bp["boxes"]:
            box.set_facecolor(color)
            box.set_alpha(0.6)
        for median in bp["medians"]:
            median.set_color("black")
        ax.plot([], [], color=color, label=method)
    ax.set_xticks(range(len(groups)))
    ax.set_xticklabels(groups)
    ax.set_ylabel("absolute error (% of line length)")
    if log_scale:
        ax.set_yscale("log")
    ax.grid(alpha=0.3, axis="y")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def stability_figure(dist: RunDistribution, path: str) -> None:
    """Boxplot of per-seed aggregate errors by fault group."""
    groups = [*FAULT_GROUPS, "ALL"]
    data = [dist.values[g] for g in groups]
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.boxplot(data, tick_labels=groups, whis=1.5)
    ax.set_ylabel("per-seed mean error (% of line length)")
    ax.set_xlabel("fault group")
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def comparison_figure(table: ComparisonTable, path: str) -> None:
    """Bar chart of mean error per method and group (log scale)."""
    groups = [*FAULT_GROUPS, "ALL"]
    fig, ax = plt.subplots(figsize=(7.2, 4.2))
    width = 0.8 / max(len(table.methods), 1)
    for mi, method in enumerate(table.methods):
        xs, ys = [], []
        for gi, group in enumerate(groups):
            value = table.cells[method][group]
            if value is not None and value > 0:
                xs.append(gi + (mi - (len(table.methods) - 1) / 2) * width)
                ys.append(value)
        ax.bar(xs, ys, width=width * 0.9, label=method)
    ax.set_xticks(range(len(groups)))
    ax.set_xticklabels(groups)
    ax.set_yscale("log")
    ax.set_ylabel("mean absolute error (% of line length)")
    ax.grid(alpha=0.3, axis="y")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
