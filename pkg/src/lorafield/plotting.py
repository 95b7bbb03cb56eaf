"""PNG figures written next to the CSV reports."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def figure_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".png")


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_rank_sweep(rows, path, metric: str = "psnr") -> Path:
    """Metric against adapter rank, one line per method."""
    series = defaultdict(list)
    for row in rows:
        if row.metric == metric and row.rank is not None:
            series[row.method].append((row.rank, row.value))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for method, pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=method)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("rank")
    ax.set_ylabel(metric.upper() if metric == "psnr" else metric)
    if series:
        ax.legend()
    return _save(fig, path)


def plot_error_curve(rows, path) -> Path:
    """Normalized approximation error against rank for every layer."""
    layers = defaultdict(list)
    for layer, rank, err in rows:
        layers[layer].append((rank, err))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for layer, pts in sorted(layers.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker=".", label=f"layer {layer}")
    ax.set_xlabel("rank")
    ax.set_ylabel("normalized error")
    ax.set_ylim(bottom=0)
    ax.legend(fontsize="small")
    return _save(fig, path)


def plot_metric_bars(rows, path) -> Path:
    """Bar chart of the PSNR rows of a report (or of its first metric if none)."""
    metric = "psnr" if any(r.metric == "psnr" for r in rows) else (rows[0].metric if rows else "psnr")
    picked = [r for r in rows if r.metric == metric]
    fig, ax = plt.subplots(figsize=(max(3, 1.2 * len(picked)), 3.5))
    labels = [r.method if r.rank is None else f"{r.method} r={r.rank}" for r in picked]
    ax.bar(range(len(picked)), [min(r.value, 100.0) for r in picked])
    ax.set_xticks(range(len(picked)), labels, rotation=30, ha="right")
    ax.set_ylabel("PSNR (dB)" if metric == "psnr" else metric)
    return _save(fig, path)


def plot_frame_psnr(psnrs, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(range(1, len(psnrs) + 1), psnrs, marker="o")
    ax.set_xlabel("frame")
    ax.set_ylabel("PSNR (dB)")
    return _save(fig, path)
