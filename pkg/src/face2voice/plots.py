"""Matplotlib figures rendered next to the report files.

All figures go straight to PNG via the Agg backend; the Software metadata
chunk is stripped so reruns produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

matplotlib.rcParams.update(
    {
        "figure.dpi": 110,
        "font.size": 9,
        "axes.titlesize": 10,
        "axes.labelsize": 9,
        "figure.autolayout": True,
    }
)

_PNG_META = {"metadata": {"Software": None}}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", **_PNG_META)
    plt.close(fig)
    return path


def save_mel_figure(frames: np.ndarray, path, title: str = "mel spectrogram") -> Path:
    fig, ax = plt.subplots(figsize=(6, 2.6))
    im = ax.imshow(frames.T, origin="lower", aspect="auto", cmap="magma")
    ax.set_xlabel("frame")
    ax.set_ylabel("mel bin")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="log energy")
    return _save(fig, path)


def save_mel_grid(named_frames: list[tuple[str, np.ndarray]], path, title: str = "") -> Path:
    n = len(named_frames)
    fig, axes = plt.subplots(n, 1, figsize=(6, 1.8 * n), squeeze=False)
    for ax, (name, frames) in zip(axes[:, 0], named_frames):
        ax.imshow(frames.T, origin="lower", aspect="auto", cmap="magma")
        ax.set_ylabel(name, fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def save_similarity_heatmap(matrix: np.ndarray, labels: list[str], path,
                            title: str = "pairwise SECS") -> Path:
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(matrix, cmap="viridis", vmin=min(0.0, matrix.min()), vmax=100.0)
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right", fontsize=7)
    ax.set_yticks(range(len(labels)), labels, fontsize=7)
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            ax.text(j, i, f"{matrix[i, j]:.0f}", ha="center", va="center",
                    color="white", fontsize=7)
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    return _save(fig, path)


def save_metric_bars(rows: list[dict], path, metrics: tuple[str, ...] = ("cer", "secs", "sed"),
                     title: str = "ablation metrics") -> Path:
    fig, axes = plt.subplots(1, len(metrics), figsize=(3.0 * len(metrics), 2.8))
    variants = [row["variant"] for row in rows]
    x = np.arange(len(variants))
    for ax, metric in zip(np.atleast_1d(axes), metrics):
        ax.bar(x, [row[metric] for row in rows], color="#46627f")
        ax.set_xticks(x, variants, rotation=30, ha="right", fontsize=7)
        ax.set_title(metric.upper())
    fig.suptitle(title)
    return _save(fig, path)


def save_loss_curves(log: list[dict], path, title: str = "training loss") -> Path:
    fig, ax = plt.subplots(figsize=(5, 2.8))
    keys = [k for k in log[0] if k != "step"] if log else []
    steps = [rec["step"] for rec in log]
    for key in keys:
        ax.plot(steps, [rec[key] for rec in log], label=key, linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    if keys:
        ax.legend(fontsize=7)
    return _save(fig, path)
