"""Static SVG figures for runs, diagnostics and scans."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_nll_trace(epochs, values, path, center=None, spread=None, width: float = 3.0):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, values, lw=1, color="C0")
    if center is not None and spread is not None:
        ax.axhspan(center - width * spread, center + width * spread, color="C1", alpha=0.25,
                   label=f"Laplace band (±{width:g} sd)")
        ax.axhline(center, color="C1", lw=0.8)
        ax.legend(loc="upper right")
    ax.set_xlabel("epochs")
    ax.set_ylabel("NLL / N")
    ax.set_yscale("log" if np.min(values) > 0 else "linear")
    _save(fig, path)


def plot_acf(acfs: dict, path, max_series: int = 5):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, r in list(acfs.items())[:max_series]:
        if len(r):
            ax.plot(np.arange(len(r)), r, lw=1, label=name)
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("lag")
    ax.set_ylabel("autocorrelation")
    if acfs:
        ax.legend(loc="upper right")
    _save(fig, path)


def plot_qq(qq: dict, path):
    fig, ax = plt.subplots(figsize=(4, 4))
    lo, hi = np.inf, -np.inf
    for name, (theo, emp) in qq.items():
        ax.scatter(theo, emp, s=6, label=name)
        lo, hi = min(lo, np.min(theo), np.min(emp)), max(hi, np.max(theo), np.max(emp))
    if np.isfinite(lo):
        ax.plot([lo, hi], [lo, hi], color="k", lw=0.8)
    ax.set_xlabel("exact quantile")
    ax.set_ylabel("sample quantile")
    ax.legend(loc="upper left")
    _save(fig, path)


def plot_path(positions, path, coords=(0, 1)):
    P = np.asarray(positions)
    fig, ax = plt.subplots(figsize=(4, 4))
    if P.shape[1] > max(coords):
        ax.plot(P[:, coords[0]], P[:, coords[1]], lw=0.5)
        ax.set_xlabel(f"w_{coords[0]}")
        ax.set_ylabel(f"w_{coords[1]}")
    else:
        ax.plot(P[:, 0], lw=0.5)
        ax.set_xlabel("index")
        ax.set_ylabel("w_0")
    _save(fig, path)


def plot_scan(values, metrics: dict, axis: str, path):
    fig, axes = plt.subplots(1, len(metrics), figsize=(4 * len(metrics), 3.5), squeeze=False)
    for ax, (name, ys) in zip(axes[0], metrics.items()):
        ys = np.asarray(ys, dtype=float)
        ax.plot(values, ys, "o-")
        ax.set_xscale("log")
        ax.set_xlabel(axis)
        ax.set_ylabel(name)
    _save(fig, path)
