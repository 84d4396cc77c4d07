"""Figure rendering for the report paths.

Training and evaluation commands write line-delimited records for scripting;
these helpers render the matching static PNGs next to them. Agg only, no
display required.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

TASK_ORDER = ("tags", "intents", "actions")
METRIC_ORDER = ("F1", "P", "R", "FrmAcc")


def save_training_curves(records: list[dict], path) -> None:
    """Loss components and (when present) dev frame accuracies per epoch."""
    epochs = [r["epoch"] for r in records]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    ax = axes[0]
    ax.plot(epochs, [r["loss"] for r in records], label="total", lw=2)
    for key, label in (("loss_act", "action"), ("loss_tag", "tag"), ("loss_int", "intent")):
        ax.plot(epochs, [r[key] for r in records], label=label, lw=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean train loss")
    ax.legend(fontsize=8)
    ax.set_title("training loss")

    ax = axes[1]
    dev_epochs = [r["epoch"] for r in records if r.get("dev")]
    plotted = False
    for task in TASK_ORDER:
        ys = [r["dev"][task]["FrmAcc"] for r in records if r.get("dev") and task in r["dev"]]
        if ys and len(ys) == len(dev_epochs):
            ax.plot(dev_epochs, ys, label=task, lw=1.5)
            plotted = True
    ax.set_xlabel("epoch")
    ax.set_ylabel("dev frame accuracy")
    ax.set_ylim(0.0, 1.05)
    if plotted:
        ax.legend(fontsize=8)
    ax.set_title("dev frame accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_eval_figure(record: dict, path) -> None:
    """Grouped bars of F1/P/R/FrmAcc for each reported task."""
    tasks = [t for t in TASK_ORDER if t in record]
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / len(METRIC_ORDER)
    for mi, metric in enumerate(METRIC_ORDER):
        xs = [ti + mi * width for ti in range(len(tasks))]
        ys = [record[task][metric] for task in tasks]
        ax.bar(xs, ys, width=width, label=metric)
    ax.set_xticks([ti + 1.5 * width for ti in range(len(tasks))])
    ax.set_xticklabels(tasks)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.legend(fontsize=8)
    ax.set_title("evaluation report")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
