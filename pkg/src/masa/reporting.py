"""Report writers: delimited outputs (CSV/JSON) plus rendered figures.

Every CLI report path writes its delimited artifact first and then, unless
figures are disabled, a PNG rendering of the same data next to it. Floats
in CSVs are written with repr so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .training import Metrics


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(rows: list[dict], fields: tuple[str, ...], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(row[f]) for f in fields])
    return path


def write_json(obj: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _epoch_series(rows: list[dict], column: str) -> tuple[np.ndarray, np.ndarray]:
    by_epoch: dict[int, list[float]] = {}
    for row in rows:
        by_epoch.setdefault(row["epoch"], []).append(row[column])
    epochs = sorted(by_epoch)
    return np.asarray(epochs), np.asarray([np.mean(by_epoch[e]) for e in epochs])


def save_pretrain_figure(rows: list[dict], path: str | Path) -> Path:
    """Per-epoch mean loss curves for the pre-training run."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for column, label in (("l_m", "motion"), ("total", "total")):
        epochs, vals = _epoch_series(rows, column)
        axes[0].plot(epochs, vals, label=label)
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss")
    axes[0].set_title("reconstruction loss")
    axes[0].legend()
    epochs, vals = _epoch_series(rows, "l_s")
    axes[1].plot(epochs, vals, color="tab:orange")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("contrastive loss")
    axes[1].set_title("alignment loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_finetune_figure(rows: list[dict], metrics: Metrics | None, path: str | Path) -> Path:
    """Cross-entropy curve, with the test confusion matrix when available."""
    ncols = 2 if metrics is not None else 1
    fig, axes = plt.subplots(1, ncols, figsize=(5 * ncols, 4))
    axes = np.atleast_1d(axes)
    epochs, vals = _epoch_series(rows, "ce")
    axes[0].plot(epochs, vals)
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("cross-entropy")
    axes[0].set_title("training loss")
    if metrics is not None:
        conf = np.asarray(metrics.confusion, dtype=np.float64)
        im = axes[1].imshow(conf, cmap="Blues")
        axes[1].set_xlabel("predicted")
        axes[1].set_ylabel("true")
        axes[1].set_title(f"confusion (top-1 P-I {metrics.top1_pi:.1f}%)")
        fig.colorbar(im, ax=axes[1], fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_evaluate_figure(metrics: Metrics, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    conf = np.asarray(metrics.confusion, dtype=np.float64)
    im = ax.imshow(conf, cmap="Blues")
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"top-1 P-I {metrics.top1_pi:.2f}%, P-C {metrics.top1_pc:.2f}%")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_mask_stats_figure(rows: list[dict], path: str | Path) -> Path:
    """Distribution of candidate-set sizes and motion ratios over a corpus."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].hist([row["candidates"] for row in rows], bins=20, color="tab:blue")
    axes[0].set_xlabel("|candidate set|")
    axes[0].set_ylabel("sequences")
    axes[1].hist([row["mean_p"] for row in rows], bins=20, color="tab:green")
    axes[1].set_xlabel("mean valid-motion ratio")
    axes[1].set_ylabel("sequences")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_sweep_figure(rows: list[dict], sweep_key: str, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [row["value"] for row in rows]
    for col, marker in (("top1_pi", "o"), ("top1_pc", "s")):
        ax.plot(xs, [row[col] for row in rows], marker=marker, label=col)
    ax.set_xlabel(sweep_key)
    ax.set_ylabel("accuracy (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
