"""Figures written next to training and evaluation reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
    "savefig.dpi": 120,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no Software tag, so identical figures give identical bytes
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_training_curves(history: dict, path: str | Path) -> Path:
    """Loss per step (top) and dev WER / BLEU-4 per evaluation (bottom).

    Dashed verticals mark steps where the training graphs were rebuilt.
    """
    steps = [s["step"] for s in history.get("steps", [])]
    totals = [s["total"] for s in history.get("steps", [])]
    evals = history.get("evals", [])
    realigned = [r["step"] for r in history.get("realignments", [])]
    with plt.rc_context(STYLE):
        fig, (top, bottom) = plt.subplots(2, 1, figsize=(6.0, 5.0), sharex=True)
        top.plot(steps, totals, lw=0.8, color="0.3")
        top.set_yscale("log")
        top.set_ylabel("joint loss")
        ev_steps = [e["step"] for e in evals]
        for key, label, color in (("wer", "dev WER", "tab:red"), ("bleu4", "dev BLEU-4", "tab:blue")):
            pts = [(s, e[key]) for s, e in zip(ev_steps, evals) if e.get(key) is not None]
            if pts:
                xs, ys = zip(*pts)
                bottom.plot(xs, ys, marker="o", ms=3, label=label, color=color)
        for ax in (top, bottom):
            for s in realigned:
                ax.axvline(s, ls="--", lw=0.8, color="tab:green")
        if realigned:
            bottom.plot([], [], ls="--", color="tab:green", label="graph rebuild")
        bottom.set_xlabel("step")
        bottom.set_ylim(0.0, 1.05)
        bottom.legend(loc="best")
        fig.tight_layout()
        return _save(fig, path)


def plot_metric_bars(rows: Sequence[dict], labels: Sequence[str], path: str | Path,
                     fields: Sequence[str] = ("wer", "bleu1", "bleu4", "rougeL")) -> Path:
    """Grouped bars, one group per metric and one bar per report row."""
    width = 0.8 / max(len(rows), 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.2))
        for i, (row, label) in enumerate(zip(rows, labels)):
            xs = [j + (i - (len(rows) - 1) / 2) * width for j in range(len(fields))]
            ys = [row.get(f) or 0.0 for f in fields]
            ax.bar(xs, ys, width=width, label=label)
        ax.set_xticks(range(len(fields)))
        ax.set_xticklabels(fields)
        ax.set_ylim(0.0, 1.05)
        ax.legend(loc="best")
        fig.tight_layout()
        return _save(fig, path)
