"""SVG line plots of training curves."""
from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams.update(
    {
        "svg.hashsalt": "shiftrisk",
        "svg.fonttype": "none",
        "axes.unicode_minus": False,
    }
)
import matplotlib.pyplot as plt  # noqa: E402

from .models import RunRecord  # noqa: E402

_LOGGER = logging.getLogger(__name__)


def plot_curves(record: RunRecord, path: str | Path, title: str = "") -> None:
    """Write accuracy and risk curves against epoch as an SVG file."""
    epochs = [row.epoch + 1 for row in record.rows]
    fig, (acc_ax, risk_ax) = plt.subplots(1, 2, figsize=(9, 3.4), constrained_layout=True)

    acc_ax.plot(epochs, [row.train_acc for row in record.rows], marker="o", label="train")
    acc_ax.plot(epochs, [row.val_acc for row in record.rows], marker="s", label="val")
    acc_ax.set_xlabel("epoch")
    acc_ax.set_ylabel("accuracy")
    acc_ax.set_ylim(0.0, 1.0)
    acc_ax.grid(True, alpha=0.3)
    acc_ax.legend(loc="lower right", fontsize=8)

    risk_ax.plot(epochs, [row.clean_risk for row in record.rows], label="clean risk")
    risk_ax.plot(epochs, [row.shifted_risk for row in record.rows], label="shifted risk")
    risk_ax.plot(epochs, [row.gap for row in record.rows], linestyle="--", label="gap")
    risk_ax.set_xlabel("epoch")
    risk_ax.grid(True, alpha=0.3)
    risk_ax.legend(loc="upper right", fontsize=8)

    if title:
        fig.suptitle(title, fontsize=10)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    _LOGGER.debug("Wrote %s", path)
