"""Figure rendering for the report path.  Everything is drawn with the Agg
backend and saved without timestamps so repeated runs give identical
files."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (math.sqrt(5) - 1.0) / 2.0

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
    "savefig.dpi": 150,
    "svg.hashsalt": "cavity-push",
}


def new_figure(width: float = 3.4, height: float | None = None, nrows: int = 1, ncols: int = 1):
    plt.rcParams.update(STYLE)
    fig, ax = plt.subplots(nrows, ncols, figsize=(width, height or width * GOLDEN * nrows))
    return fig, ax


def save(fig, path: Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_spectrum(path, det_mhz, curves: dict[str, np.ndarray]):
    fig, ax = new_figure()
    for label, y in curves.items():
        ax.plot(det_mhz, y, label=label)
    ax.set_xlabel(r"$\Delta_{cp}/2\pi$ (MHz)")
    ax.set_ylabel(r"$\langle n \rangle$")
    ax.legend(frameon=False)
    return save(fig, path)


def plot_arrivals(path, edges, counts, model_t=None, model_y=None, label="fit"):
    fig, ax = new_figure()
    ax.bar(edges[:-1] * 1e3, counts, width=np.diff(edges) * 1e3, align="edge",
           color="0.6", edgecolor="none")
    if model_t is not None:
        ax.plot(model_t * 1e3, model_y, "k-", label=label)
        ax.legend(frameon=False)
    ax.set_xlabel("arrival time (ms)")
    ax.set_ylabel("events per bin")
    return save(fig, path)


def plot_reconstruction(path, edges, measured, reconstructed, model_t=None, model_y=None):
    fig, ax = new_figure()
    left = edges[:-1] * 1e3
    w = np.diff(edges) * 1e3
    ax.bar(left, reconstructed, width=w, align="edge", color="tab:blue", alpha=0.5, label="reconstructed")
    ax.bar(left, measured, width=w, align="edge", color="k", label="measured")
    if model_t is not None:
        ax.plot(model_t * 1e3, model_y, "r-", label="fit")
    ax.set_xlabel("arrival time (ms)")
    ax.set_ylabel(r"$\langle N_i \rangle / M$")
    ax.legend(frameon=False)
    return save(fig, path)


def plot_g2(path, tau, g2, err, model_tau=None, model_g2=None):
    fig, ax = new_figure()
    ax.errorbar(tau * 1e3, g2, yerr=err, fmt="o", ms=2.5, color="k", elinewidth=0.6)
    if model_tau is not None:
        ax.plot(model_tau * 1e3, model_g2, "r-")
    ax.axhline(1.0, color="0.6", lw=0.8, ls="--")
    ax.set_xlabel(r"$\tau$ (ms)")
    ax.set_ylabel(r"$g^{(2)}(\tau)$")
    return save(fig, path)


def plot_count_histogram(path, counts, model):
    fig, ax = new_figure()
    hist = np.bincount(np.asarray(counts, dtype=np.int64))
    x = np.arange(hist.size)
    ax.semilogy(x, np.where(hist > 0, hist, np.nan), "k.", ms=2)
    gauss = model.amplitude * np.exp(-0.5 * ((x - model.c_bar) / model.sigma) ** 2)
    ax.semilogy(x, np.where(gauss > 0.1, gauss, np.nan), "r-")
    ax.axvline(model.threshold_counts, color="tab:blue", lw=0.8)
    ax.set_xlabel("counts per bin")
    ax.set_ylabel("occurrences")
    return save(fig, path)


def plot_averaged_traces(path, traces: dict[str, tuple[np.ndarray, np.ndarray]]):
    fig, ax = new_figure()
    for label, (tau, n) in traces.items():
        ax.plot(tau * 1e6, n, label=label)
    ax.set_xlabel(r"time from dip minimum ($\mu$s)")
    ax.set_ylabel(r"$\langle n \rangle$")
    ax.set_xlim(-400, 400)
    ax.legend(frameon=False, title="s")
    return save(fig, path)


def plot_transit(path, traj: np.ndarray, trace_t: np.ndarray, trace_n: np.ndarray, d: float, w0: float):
    fig, (a1, a2) = new_figure(nrows=2, ncols=1)
    a1.plot(trace_t * 1e3, trace_n, "k-")
    a1.set_xlim(0.0, traj[-1, 0] * 1e3)
    a2.set_xlim(0.0, traj[-1, 0] * 1e3)
    a1.set_ylabel(r"$\langle n \rangle$")
    a2.plot(traj[:, 0] * 1e3, (traj[:, 3] + d) / w0, "k-")
    a2.axhline(0.0, color="0.6", lw=0.8, ls="--")
    a2.set_xlabel("time (ms)")
    a2.set_ylabel(r"$(z + d)/w_0$")
    return save(fig, path)
