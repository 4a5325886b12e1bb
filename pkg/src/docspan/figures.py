"""Matplotlib figures rendered next to the CSV outputs of train/pretrain/eval."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import EvalReport


def plot_training_history(history: list[dict], path) -> None:
    """Loss curve plus dev F1 per epoch from train_model history rows."""
    epochs = [r["epoch"] for r in history]
    fig, ax1 = plt.subplots(figsize=(7, 4))
    ax1.plot(epochs, [r["train_loss"] for r in history], color="tab:red", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [r["dev_micro"] for r in history], color="tab:blue", label="dev micro F1")
    ax2.plot(epochs, [r["dev_macro"] for r in history], color="tab:cyan", linestyle="--", label="dev macro F1")
    ax2.set_ylabel("dev F1", color="tab:blue")
    ax2.set_ylim(0.0, 1.05)
    fig.legend(loc="lower center", ncol=3, frameon=False)
    fig.tight_layout(rect=(0, 0.08, 1, 1))
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_pretrain_losses(rows: list[dict], path) -> None:
    """Per-dataset mean loss per epoch from pretrain_spans rows."""
    datasets = sorted({r["dataset"] for r in rows})
    fig, ax = plt.subplots(figsize=(7, 4))
    for ds in datasets:
        pts = [(r["epoch"], r["mean_loss"]) for r in rows if r["dataset"] == ds]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=ds)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean chain loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_field_f1(report: EvalReport, path, title: str = "") -> None:
    """Horizontal per-field F1 bars with the micro/macro summary in the title."""
    rows = report.rows()
    fields = [r["field_id"] for r in rows]
    f1s = [r["f1"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, max(2.5, 0.35 * len(fields) + 1)))
    ax.barh(range(len(fields)), f1s, color="tab:blue")
    ax.set_yticks(range(len(fields)))
    ax.set_yticklabels(fields, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlim(0, 1.0)
    ax.set_xlabel("entity F1")
    head = f"micro={report.micro_f1:.4f}  macro={report.macro_f1:.4f}"
    ax.set_title(f"{title}  {head}".strip(), fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
