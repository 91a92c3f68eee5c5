"""CSV tables and matplotlib figures for training runs, gate usage and timing sweeps."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def format_active_set(active) -> str:
    """Active set as ``i;j;...`` (sorted space indices)."""
    return ";".join(str(int(i)) for i in sorted(active))


def write_gate_histogram(hist: dict, csv_path, png_path=None, title="Active sets") -> None:
    """``active_set,count`` rows for every possible set (zero counts included)."""
    keys = sorted(hist)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["active_set", "count"])
        for key in keys:
            w.writerow([format_active_set(key), hist[key]])
    if png_path is None:
        return
    fig, ax = plt.subplots(figsize=(max(4.0, 0.45 * len(keys)), 3.2))
    ax.bar(range(len(keys)), [hist[k] for k in keys], color="tab:blue")
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels(["{" + ",".join(str(i) for i in k) + "}" for k in keys], rotation=60, fontsize=7)
    ax.set_ylabel("examples")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def write_timing(rows: list[dict], csv_path, png_path=None) -> None:
    cols = ["n", "k", "signature", "seconds_per_query", "seconds_per_example", "components_per_query"]
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    if png_path is None:
        return
    ns = [r["n"] for r in rows]
    us = [1e6 * r["seconds_per_example"] for r in rows]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(ns, us, "o-")
    ax.set_xlabel("N (number of spaces)")
    ax.set_ylabel("µs per scored triple")
    ax.set_ylim(0, 1.3 * max(us))
    ax.set_xticks(ns)
    ax.set_title(f"Inference time, K={rows[0]['k']}")
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def plot_training_curve(history: list[dict], png_path, metric: str) -> None:
    """Loss per epoch, with the validation metric on a second axis when present."""
    epochs = [r["epoch"] for r in history]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(epochs, [r["loss"] for r in history], color="tab:blue", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss", color="tab:blue")
    key = f"valid_{metric}"
    pts = [(r["epoch"], r[key]) for r in history if r.get(key) is not None]
    if pts:
        ax2 = ax.twinx()
        ax2.plot(*zip(*pts), "o-", color="tab:orange", markersize=3)
        ax2.set_ylabel(f"validation {metric}", color="tab:orange")
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
