"""Static figures written next to the CSV/JSON outputs of the CLI.

Figures are drawn on an explicit Agg canvas, so no global pyplot state or
display is involved, and PNG metadata is stripped to keep files
byte-reproducible.
"""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

_PNG_META = {"Software": None}


def _save(fig: Figure, path) -> None:
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=120, metadata=_PNG_META)


def plot_confusion(confusion, class_names, path, title: str = "") -> None:
    conf = np.asarray(confusion)
    fig = Figure(figsize=(4.2, 3.8))
    ax = fig.add_subplot()
    ax.imshow(conf, cmap="Blues")
    ticks = np.arange(len(class_names))
    ax.set_xticks(ticks, labels=class_names)
    ax.set_yticks(ticks, labels=class_names)
    ax.set_xlabel("predicted class")
    ax.set_ylabel("true class")
    top = conf.max() if conf.size else 0
    for i in range(conf.shape[0]):
        for j in range(conf.shape[1]):
            ax.text(j, i, str(conf[i, j]), ha="center", va="center",
                    color="white" if conf[i, j] > top / 2 else "black")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_training(report, path) -> None:
    epochs = np.arange(1, len(report.train_loss) + 1)
    fig = Figure(figsize=(7.5, 3.2))
    ax1, ax2 = fig.subplots(1, 2)
    ax1.plot(epochs, report.train_accuracy, label="train")
    ax1.plot(epochs, report.val_accuracy, label="validation")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("accuracy")
    ax1.legend()
    ax2.plot(epochs, report.train_loss, label="train")
    ax2.plot(epochs, report.val_loss, label="validation")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("cross-entropy")
    ax2.set_yscale("log")
    ax2.axvline(report.best_epoch, color="grey", lw=0.8, ls="--")
    fig.tight_layout()
    _save(fig, path)


def plot_sweep(ms, accuracy, ideal, path, spread=None) -> None:
    """Accuracy versus number of measurements, ideal accuracy as a band."""
    ms = np.asarray(ms, dtype=float)
    acc = np.asarray(accuracy, dtype=float)
    fig = Figure(figsize=(4.8, 3.4))
    ax = fig.add_subplot()
    ideal = np.atleast_1d(ideal)
    ax.axhspan(ideal.min() - 0.005, ideal.max() + 0.005, color="orange", alpha=0.3, label="ideal")
    if spread is not None:
        ax.errorbar(ms, acc, yerr=spread, fmt="o-", ms=4, capsize=2, label="finite M")
    else:
        ax.plot(ms, acc, "o-", ms=4, label="finite M")
    ax.set_xscale("log")
    ax.set_xlabel("measurements M")
    ax.set_ylabel("test accuracy")
    ax.legend(loc="lower right")
    fig.tight_layout()
    _save(fig, path)


def plot_stability(smap, path, level: float = 0.7) -> None:
    fig = Figure(figsize=(4.6, 3.8))
    ax = fig.add_subplot()
    extent = (smap.delta_axis[0], smap.delta_axis[-1], smap.delta_p_axis[0], smap.delta_p_axis[-1])
    im = ax.imshow(smap.efficiency, origin="lower", extent=extent, aspect="auto",
                   vmin=0, vmax=1, cmap="viridis")
    ax.contour(smap.delta_axis, smap.delta_p_axis, smap.efficiency, levels=[level], colors="w")
    ax.set_xlabel("delta")
    ax.set_ylabel("delta_p")
    fig.colorbar(im, ax=ax, label="efficiency")
    if smap.drive.name:
        ax.set_title(smap.drive.name)
    fig.tight_layout()
    _save(fig, path)
