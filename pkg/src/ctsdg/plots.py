"""Figure rendering for training reports and evaluation tables.

Figures are written next to the machine-readable outputs; the JSON stays the
source of truth.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import OutputError


def plot_training_curves(report_dict: dict, out_path: str) -> None:
    epochs = report_dict["epochs"]
    if not epochs:
        return
    xs = np.arange(len(epochs))
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharex=True)
    for ax, split in zip(axes, ("train", "val")):
        for key, label in (("total", "total"), ("l_y", "classification"),
                           ("l_r", "matching"), ("l_con", "contrastive")):
            ax.plot(xs, [e[split][key] for e in epochs], label=label, lw=1.2)
        ax.set_title(split)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend(fontsize=8)
    best = report_dict.get("best_epoch", -1)
    if best >= 0:
        for ax in axes:
            ax.axvline(best, color="gray", ls="--", lw=0.8)
    fig.tight_layout()
    _save(fig, out_path)


def plot_lodo_bars(results: list[dict], out_path: str, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    targets = [r["target_domain"] for r in results]
    means = [r["mean"] for r in results]
    stds = [r["std"] for r in results]
    ax.bar(targets, means, yerr=stds, capsize=4, color="steelblue")
    ax.set_ylabel("held-out accuracy (%)")
    ax.set_xlabel("held-out domain")
    ax.set_ylim(0, 100)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, out_path)


def plot_ablation_bars(table: dict, out_path: str) -> None:
    variants = list(table["variants"])
    folds = table["folds"]
    width = 0.8 / len(variants)
    fig, ax = plt.subplots(figsize=(8, 4))
    xs = np.arange(len(folds))
    for i, v in enumerate(variants):
        means = [r["mean"] for r in table["variants"][v]]
        ax.bar(xs + i * width, means, width=width, label=v)
    ax.set_xticks(xs + 0.4 - width / 2)
    ax.set_xticklabels(folds)
    ax.set_ylabel("held-out accuracy (%)")
    ax.set_ylim(0, 100)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, out_path)


def _save(fig, out_path: str) -> None:
    try:
        fig.savefig(out_path, dpi=120)
    except OSError as e:
        raise OutputError(f"cannot write figure to {out_path}: {e}") from e
    finally:
        plt.close(fig)
