"""SVG figures for metric logs and ablation summaries."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed ids and no timestamp so identical inputs give identical bytes
matplotlib.rcParams["svg.hashsalt"] = "fbcpr"
matplotlib.rcParams["svg.fonttype"] = "none"
SVG_META = {"Date": None}


class MetricsFormatError(ValueError):
    pass


def read_series(path) -> dict[str, tuple[list[float], list[float]]]:
    """Series name -> (x, y) from a training metrics CSV or an evaluation CSV.

    Training logs (env_steps, kind, name, value) are keyed by name with env
    steps on x; evaluation tables (task_id, metric, value) plot one point per
    task at its row index.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return {}
    header, body = rows[0], rows[1:]
    col = {c: i for i, c in enumerate(header)}
    series: dict[str, tuple[list, list]] = {}
    try:
        if {"env_steps", "name", "value"} <= col.keys():
            for r in body:
                xs, ys = series.setdefault(r[col["name"]], ([], []))
                xs.append(float(r[col["env_steps"]]))
                ys.append(float(r[col["value"]]))
        elif {"task_id", "metric", "value"} <= col.keys():
            for k, r in enumerate(body):
                xs, ys = series.setdefault(r[col["metric"]], ([], []))
                xs.append(float(k))
                ys.append(float(r[col["value"]]))
        else:
            raise MetricsFormatError(f"{path}: unrecognized header {header}")
    except (IndexError, ValueError) as exc:
        if isinstance(exc, MetricsFormatError):
            raise
        raise MetricsFormatError(f"{path}: malformed row ({exc})") from exc
    return series


def plot_metrics(csv_path, out_svg, names=None):
    """One line per series; losses and evaluation metrics go on separate panels."""
    series = read_series(csv_path)
    if names:
        series = {k: v for k, v in series.items() if k in names}
    evals = {k: v for k, v in series.items() if "/" in k}
    others = {k: v for k, v in series.items() if "/" not in k}
    panels = [p for p in (others, evals) if p] or [{}]
    fig, axes = plt.subplots(len(panels), 1, figsize=(6.4, 3.2 * len(panels)), squeeze=False)
    for ax, panel in zip(axes[:, 0], panels):
        for name in sorted(panel):
            xs, ys = panel[name]
            ax.plot(xs, ys, marker="o" if len(xs) < 3 else None, label=name, lw=1.2)
        ax.set_xlabel("env steps")
        if panel:
            ax.legend(fontsize=6, ncol=2, frameon=False)
    fig.tight_layout()
    fig.savefig(out_svg, format="svg", metadata=SVG_META)
    plt.close(fig)


def plot_ablation(summary: dict[str, dict[str, list[float]]], out_svg, metrics=("goal/success", "tracking/success")):
    """Grouped bars of per-seed means with seed scatter: summary[variant][metric] = per-seed values."""
    variants = list(summary)
    fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 3.0), squeeze=False)
    for ax, metric in zip(axes[0], metrics):
        for i, v in enumerate(variants):
            vals = summary[v].get(metric, [])
            mean = sum(vals) / len(vals) if vals else 0.0
            ax.bar(i, mean, color="0.75", edgecolor="k", lw=0.8)
            ax.plot([i] * len(vals), vals, "k.", ms=4)
        ax.set_xticks(range(len(variants)))
        ax.set_xticklabels(variants, rotation=30, fontsize=8)
        ax.set_ylim(0, 1.05)
        ax.set_title(metric, fontsize=9)
    fig.tight_layout()
    fig.savefig(out_svg, format="svg", metadata=SVG_META)
    plt.close(fig)
