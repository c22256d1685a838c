"""Figures for training runs and sweeps, written straight to files."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .train import SweepResult, TrainLog  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.2),
    "figure.dpi": 120,
    "font.size": 9,
    "axes.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_training_curve(tlog: TrainLog, path, metric: str = "PER") -> Path:
    """Step losses on the left axis, per-epoch dev error on the right."""
    steps = tlog.steps()
    epochs = tlog.epochs()
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        xs = [r["step"] for r in steps if "skipped_batch" not in r]
        for key, style in (("loss", "-"), ("ctc", ":"), ("ce", "--")):
            ax.plot(xs, [r[key] for r in steps if "skipped_batch" not in r], style, label=key)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend(loc="upper center", frameon=False, ncol=3)
        if epochs:
            per_epoch = max(len(steps) // max(len(epochs), 1), 1)
            ax2 = ax.twinx()
            ax2.spines["right"].set_visible(True)
            ax2.plot([r["epoch"] * per_epoch for r in epochs], [r["dev_error"] for r in epochs],
                     "o-", color="black", markersize=3, label=f"dev {metric}")
            ax2.set_ylabel(f"dev {metric} (%)")
        return _save(fig, path)


def plot_sweep(result: SweepResult, path) -> Path:
    """Per-seed dev errors as dots with the median as a line, one column per value."""
    label = "β" if result.param == "beta" else "τ"
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        pos = range(len(result.values))
        for i, v in enumerate(result.values):
            errs = result.errors[v]
            ax.plot([i] * len(errs), errs, "o", color="0.6", markersize=3)
        ax.plot(list(pos), result.medians(), "s-", color="black", markersize=4, label="median")
        ax.set_xticks(list(pos), result.header_cells())
        ax.set_xlabel(label)
        ax.set_ylabel(f"dev {result.metric} (%)")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_arms(errors: Mapping[str, Sequence[float]], path, metric: str = "PER") -> Path:
    """Compare per-seed test errors of several training arms."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        names = list(errors)
        ax.boxplot([list(errors[n]) for n in names], widths=0.5, medianprops={"color": "black"})
        for i, n in enumerate(names, 1):
            ax.plot([i] * len(errors[n]), errors[n], "o", color="0.5", markersize=3)
        ax.set_xticks(range(1, len(names) + 1), names)
        ax.set_ylabel(f"test {metric} (%)")
        return _save(fig, path)
