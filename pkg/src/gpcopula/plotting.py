"""Figures written next to the CSV outputs (Agg backend, no display needed)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from gpcopula.synthetic import lower_triangle_labels  # noqa: E402


def _save(fig, path) -> None:
    path = os.fspath(path)
    root, ext = os.path.splitext(path)
    tmp = f"{root}.tmp{ext}"
    fig.savefig(tmp, dpi=120, bbox_inches="tight")
    plt.close(fig)
    os.replace(tmp, path)


def _tidy(ax) -> None:
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)


def plot_covariance_trace(path, t, pred_covs, true_covs=None, max_steps: int | None = None) -> None:
    """Lower-triangle covariance entries over time; truth solid, prediction dashed."""
    t = np.asarray(t)
    if max_steps is not None:
        t = t[:max_steps]
        pred_covs = pred_covs[:max_steps]
        true_covs = None if true_covs is None else true_covs[:max_steps]
    n = pred_covs.shape[1]
    fig, ax = plt.subplots(figsize=(8, 4))
    colors = plt.cm.tab20(np.linspace(0, 1, max(len(lower_triangle_labels(n)), 2)))
    for k, (i, j) in enumerate(lower_triangle_labels(n)):
        if true_covs is not None:
            ax.plot(t, true_covs[:, i, j], color=colors[k], lw=1.2)
        ax.plot(t, pred_covs[:, i, j], color=colors[k], lw=1.2, ls="--")
    ax.set_xlabel("time step")
    ax.set_ylabel("covariance entry")
    ax.set_title("one-step-ahead covariance" + (" (solid: true, dashed: predicted)" if true_covs is not None else ""))
    _tidy(ax)
    _save(fig, path)


def plot_loss_trace(path, updates, losses, learning_rates=None) -> None:
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(updates, losses, lw=0.6, color="0.6", label="per update")
    window = min(50, len(losses))
    if window > 1:
        smooth = np.convolve(losses, np.ones(window) / window, mode="valid")
        ax.plot(np.asarray(updates)[window - 1:], smooth, color="C0", label=f"mean of {window}")
    ax.set_xlabel("update")
    ax.set_ylabel("NLL per step and series")
    _tidy(ax)
    if learning_rates is not None:
        ax2 = ax.twinx()
        ax2.plot(updates, learning_rates, color="C3", lw=1.0)
        ax2.set_ylabel("learning rate", color="C3")
        ax2.set_yscale("log")
    ax.legend(loc="upper right", frameon=False)
    _save(fig, path)


def plot_bench(path, logpdf_rows, rollout_rows) -> None:
    """``logpdf_rows``: (N, seconds); ``rollout_rows``: (S, seconds)."""
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    n, sec = np.array(logpdf_rows, dtype=float).T
    a1.loglog(n, sec, "o-")
    a1.loglog(n, sec[0] * n / n[0], "k:", label="linear")
    a1.set_xlabel("dimension N")
    a1.set_ylabel("seconds per logpdf")
    a1.legend(frameon=False)
    s, sec = np.array(rollout_rows, dtype=float).T
    a2.plot(s, sec, "o-")
    a2.plot(s, sec[0] * s / s[0], "k:", label="linear")
    a2.set_xlabel("samples S")
    a2.set_ylabel("rollout seconds")
    a2.legend(frameon=False)
    for ax in (a1, a2):
        _tidy(ax)
    _save(fig, path)
