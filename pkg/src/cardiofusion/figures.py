"""Matplotlib renderings written next to the delimited report files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 120


def _save(fig, path: str | Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def render_record(path, record_id: str, fs: float, filtered: np.ndarray,
                  ecg_spectrum, image_pixels: np.ndarray, radial_spectrum) -> None:
    """Waveform, its spectrum, the fundus image, and its radial profile."""
    fig, axes = plt.subplots(2, 2, figsize=(10, 6))
    t = np.arange(filtered.size) / fs
    axes[0, 0].plot(t, filtered, lw=0.7)
    axes[0, 0].set_xlabel("time (s)")
    axes[0, 0].set_ylabel("mV")
    axes[0, 0].set_title(f"{record_id}: filtered ECG")
    axes[0, 1].plot(ecg_spectrum.centers, ecg_spectrum.weights, lw=0.9)
    axes[0, 1].set_xlabel("normalized frequency")
    axes[0, 1].set_ylabel("weight")
    axes[0, 1].set_title("beat-averaged spectrum")
    axes[1, 0].imshow(image_pixels, cmap="gray", vmin=0.0, vmax=1.0)
    axes[1, 0].set_title("fundus image")
    axes[1, 0].axis("off")
    axes[1, 1].plot(radial_spectrum.centers, radial_spectrum.weights, lw=0.9)
    axes[1, 1].set_xlabel("radius (cycles)")
    axes[1, 1].set_ylabel("weight")
    axes[1, 1].set_title("radial spectrum")
    _save(fig, path)


def render_class_metrics(path, class_rows: list[dict]) -> None:
    """Grouped bars of per-class accuracy / sensitivity / specificity."""
    names = [r["class"] for r in class_rows]
    metrics = ("accuracy", "sensitivity", "specificity")
    x = np.arange(len(names))
    width = 0.26
    fig, ax = plt.subplots(figsize=(7, 4))
    for k, metric in enumerate(metrics):
        vals = [r[metric] if r[metric] is not None else 0.0 for r in class_rows]
        ax.bar(x + (k - 1) * width, vals, width, label=metric)
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("value")
    ax.legend(loc="lower right")
    ax.set_title("per-class metrics")
    _save(fig, path)


def render_history(path, history: list[dict]) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    epochs = [h["epoch"] for h in history]
    ax.plot(epochs, [h["loss"] for h in history], label="loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [h["train_acc"] for h in history], color="tab:orange", label="train acc")
    ax2.set_ylim(0.0, 1.05)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax2.set_ylabel("train accuracy")
    ax.set_title("training history")
    _save(fig, path)


def render_anova(path, rows: list[dict], alpha: float = 0.05) -> None:
    """F-statistic bars with the significance threshold marked."""
    fig, ax = plt.subplots(figsize=(7, 4))
    names = [r["feature"] for r in rows]
    stats = [r["f_stat"] if np.isfinite(r["f_stat"]) else 0.0 for r in rows]
    ax.bar(np.arange(len(names)), stats, color="tab:blue")
    thresholds = [r.get("f_crit") for r in rows if r.get("f_crit") is not None]
    if thresholds:
        ax.axhline(float(np.mean(thresholds)), ls=":", color="black",
                   label=f"p = {alpha} threshold")
        ax.legend()
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel("F statistic")
    ax.set_title("feature significance")
    _save(fig, path)


def render_quartiles(path, per_feature: dict[str, dict[str, list[float]]]) -> None:
    """One boxplot panel per feature, classes along the x axis."""
    n = len(per_feature)
    fig, axes = plt.subplots(1, n, figsize=(4 * max(1, n), 4), squeeze=False)
    for ax, (feature, groups) in zip(axes[0], sorted(per_feature.items())):
        labels = sorted(groups)
        ax.boxplot([groups[c] for c in labels], tick_labels=labels, whis=(0, 100))
        ax.set_title(feature)
    _save(fig, path)


def render_compare(path, rows: list[dict]) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    metrics = ("accuracy", "sensitivity", "specificity")
    x = np.arange(len(rows))
    width = 0.26
    for k, metric in enumerate(metrics):
        ax.bar(x + (k - 1) * width, [r[metric] for r in rows], width, label=metric)
    ax.set_xticks(x)
    ax.set_xticklabels([r["method"] for r in rows])
    ax.set_ylabel("percent")
    ax.legend(loc="lower right")
    ax.set_title("method comparison")
    _save(fig, path)
