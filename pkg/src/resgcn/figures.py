"""Matplotlib renderings saved alongside the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .stats import Histogram, TestResult, histogram

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#17becf")


def _style(ax, xlabel: str, ylabel: str, title: str) -> None:
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(alpha=0.3, linewidth=0.5)


def save_histogram_png(samples: dict[str, list[float]], bins: int,
                       lo: float, hi: float, path: str,
                       title: str = "Test accuracy",
                       xlabel: str = "accuracy") -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for color, (label, vals) in zip(_COLORS, samples.items()):
        h = histogram(vals, bins, lo, hi)
        ax.stairs(h.counts, h.edges, fill=True, alpha=0.45, color=color,
                  label=f"{label} (n={len(vals)})")
    _style(ax, xlabel, "runs", title)
    if samples:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_compare_png(labels: tuple[str, str],
                     samples: tuple[list[float], list[float]],
                     result: TestResult, bins: int, lo: float, hi: float,
                     path: str) -> None:
    save_histogram_png(
        {labels[0]: samples[0], labels[1]: samples[1]}, bins, lo, hi, path,
        title=f"{result.method}: stat={result.statistic:.4g} "
              f"p={result.p_value:.4g}")


def save_sweep_pngs(depths: list[int], series: dict[str, dict[str, list[float]]],
                    out_stem: str) -> list[str]:
    """Three depth-sweep panels: accuracy, iterations to stop, hit ratio."""
    panels = (
        ("acc_mean", "mean accuracy of stopped runs", "accuracy"),
        ("iters_mean", "mean epochs to stop", "epochs"),
        ("hit_ratio", "fraction of runs hitting the stop rule", "ratio"),
    )
    written = []
    for key, title, ylabel in panels:
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        for color, (model, metrics) in zip(_COLORS, series.items()):
            if key == "acc_mean" and "acc_std" in metrics:
                ax.errorbar(depths, metrics[key], yerr=metrics["acc_std"],
                            marker="o", capsize=3, color=color, label=model)
            else:
                ax.plot(depths, metrics[key], marker="o", color=color,
                        label=model)
        _style(ax, "layers", ylabel, title)
        ax.legend(fontsize=8)
        fig.tight_layout()
        out = f"{out_stem}_{key}.png"
        fig.savefig(out, dpi=130)
        plt.close(fig)
        written.append(out)
    return written
