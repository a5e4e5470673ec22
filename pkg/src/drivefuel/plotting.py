"""Matplotlib figures for the CLI reports.

Every function renders one figure to a PNG file and closes it. The Agg
backend is forced so nothing needs a display.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.frameon": False,
}
PARAM_LABELS = {"a": "max acceleration a (m/s$^2$)", "b": "desired deceleration b (m/s$^2$)",
                "T": "time headway T (s)", "s0": "jam distance $s_0$ (m)"}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # no timestamp or software tag, so identical data gives identical files
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_trajectories(t, leader_speed, followers: Mapping[str, np.ndarray], path) -> Path:
    """Leader speed with a few follower speed traces overlaid."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(t, leader_speed, color="black", lw=1.4, label="leader")
        for label, v in followers.items():
            ax.plot(t, v, lw=0.9, alpha=0.85, label=label)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("speed (m/s)")
        ax.legend(loc="upper left", ncol=4, fontsize=8)
        return _save(fig, path)


def plot_trip_histogram(values, reference: float, path, xlabel: str = "trip distance (m)") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.hist(values, bins=30, color="tab:blue", alpha=0.8)
        ax.axvline(reference, color="black", ls="--", lw=1, label="leader")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("count")
        ax.legend()
        return _save(fig, path)


def plot_convergence(sizes, series: Mapping[str, Sequence[float]], path) -> Path:
    """Distance correlation against the number of simulations, one line per parameter."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, r in series.items():
            ax.plot(sizes, r, lw=1.2, label=name)
        ax.set_xlabel("simulations")
        ax.set_ylabel("distance correlation with trip fuel")
        ax.set_ylim(0, 1)
        ax.legend(ncol=4)
        return _save(fig, path)


def plot_fuel_vs_a(a, fuel, fits: Mapping[str, callable], path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.scatter(a, fuel, s=4, alpha=0.4, color="tab:gray", label="simulations")
        grid = np.linspace(np.min(a), np.max(a), 200)
        for label, f in fits.items():
            ax.plot(grid, f(grid), lw=1.6, label=label)
        ax.set_xlabel(PARAM_LABELS["a"])
        ax.set_ylabel("trip fuel (L)")
        ax.legend()
        return _save(fig, path)


def plot_pred_vs_obs(observed, predicted, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.6, 4.4))
        ax.scatter(observed, predicted, s=4, alpha=0.5)
        lo = float(min(np.min(observed), np.min(predicted)))
        hi = float(max(np.max(observed), np.max(predicted)))
        ax.plot([lo, hi], [lo, hi], color="black", lw=1)
        ax.set_xlabel("simulated trip fuel (L)")
        ax.set_ylabel("predicted trip fuel (L)")
        return _save(fig, path)


def plot_histogram_pair(edges, p_obs, p_pred, kl: float, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        centers = 0.5 * (edges[1:] + edges[:-1])
        width = np.diff(edges)
        ax.bar(centers, p_obs, width=width, alpha=0.5, label="simulated")
        ax.bar(centers, p_pred, width=width, alpha=0.5, label="predicted")
        ax.set_xlabel("trip fuel (L)")
        ax.set_ylabel("probability")
        ax.set_title(f"KL = {kl:.4f} nats")
        ax.legend()
        return _save(fig, path)


def plot_param_distributions(columns: Mapping[str, np.ndarray], path) -> Path:
    """Histograms of sampled preference parameters, one panel each."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(columns), figsize=(2.2 * len(columns), 2.6))
        for ax, (name, x) in zip(np.atleast_1d(axes), columns.items()):
            ax.hist(x, bins=25, color="tab:green", alpha=0.8)
            ax.set_xlabel(name)
        return _save(fig, path)
