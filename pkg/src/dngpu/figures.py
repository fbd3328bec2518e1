"""Render PNG figures next to the CSV reports.

Every figure is derived from a delimited file the trainer or evaluator
already wrote, so plots can be regenerated offline from the CSVs alone.
Uses the Agg backend with fixed metadata so identical inputs give identical
bytes.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_SAVEFIG = dict(dpi=120, metadata={"Software": "dngpu"})


def _read_csv(path) -> dict[str, list[float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    return {key: [float(r[key]) for r in rows] for key in rows[0]}


def render_metrics(csv_path, png_path) -> None:
    """Training curves: eval/train accuracy and error loss against the step."""
    cols = _read_csv(csv_path)
    fig, (ax_acc, ax_loss) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    if cols:
        ax_acc.plot(cols["step"], cols["eval_bit_acc"], label="eval bit accuracy")
        ax_acc.plot(cols["step"], cols["train_bit_acc"], label="train bit accuracy",
                    alpha=0.7)
        ax_loss.plot(cols["step"], cols["error_loss"], label="error loss")
        ax_loss.set_yscale("log")
    ax_acc.set_ylabel("bit accuracy")
    ax_acc.set_ylim(0.0, 1.02)
    ax_acc.legend(loc="lower right")
    ax_loss.set_ylabel("error loss")
    ax_loss.set_xlabel("step")
    fig.tight_layout()
    fig.savefig(png_path, **_SAVEFIG)
    plt.close(fig)


def render_curve(csv_path, png_path, train_max: int | None = None) -> None:
    """Generalization curve: bit accuracy against evaluation input length."""
    cols = _read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    if cols:
        ax.plot(cols["length"], cols["bit_acc"], marker="o")
    if train_max is not None:
        ax.axvline(train_max, linestyle="--", color="gray", label="training length")
        ax.legend()
    ax.set_xlabel("input length")
    ax.set_ylabel("bit accuracy")
    ax.set_ylim(0.0, 1.02)
    fig.tight_layout()
    fig.savefig(png_path, **_SAVEFIG)
    plt.close(fig)


def render_trace_sheet(images, groups, png_path, columns: int = 8) -> None:
    """Contact sheet of per-map trace images, labelled with the gate group."""
    count = len(images)
    rows = (count + columns - 1) // columns
    fig, axes = plt.subplots(rows, columns, figsize=(1.6 * columns, 1.8 * rows))
    axes = list(axes.flat) if count > 1 else [axes]
    for ax in axes[count:]:
        ax.axis("off")
    for ax, img, group in zip(axes, images, groups):
        ax.imshow(img, cmap="gray", vmin=0, vmax=255, aspect="auto",
                  interpolation="nearest")
        ax.set_title(group, fontsize=6)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(png_path, **_SAVEFIG)
    plt.close(fig)
