"""Static figure rendering (PNG)."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from safecage.harness import moving_average  # noqa: E402


def plot_training(logs: dict[str, str | Path], out_png, window: int = 50, title: str = "Episode rewards") -> Path:
    """Raw episode returns (transparent) with their moving average, one line per log."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, path in logs.items():
        with open(path, newline="") as fh:
            ret = np.array([float(r["return"]) for r in csv.DictReader(fh)])
        x = np.arange(len(ret))
        line, = ax.plot(x, moving_average(ret, window), label=label)
        ax.plot(x, ret, color=line.get_color(), alpha=0.2, linewidth=0.8)
    ax.set_xlabel("episode")
    ax.set_ylabel("episode reward")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def plot_adversarial(curves: dict[str, str | Path], out_png, title: str = "Minimum TH per episode") -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, path in curves.items():
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        m = np.array([float(r["smoothed_mean"]) for r in rows])
        s = np.array([float(r["smoothed_std"]) for r in rows])
        x = np.arange(len(m))
        line, = ax.plot(x, m, label=label)
        ax.fill_between(x, m - s, m + s, color=line.get_color(), alpha=0.25)
    ax.set_xlabel("adversary training episode")
    ax.set_ylabel("min TH [s]")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)
