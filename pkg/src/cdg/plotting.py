"""PNG figures written next to the CSV reports.

Figures are rendered with the Agg backend and without the PNG ``Software``
tag, so identical data gives identical files.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE = dict(dpi=100, metadata={"Software": None})


def _finish(fig, ax, path):
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def accuracy_figure(trials, path):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    plotted = 0
    for t in trials:
        ep = [e for e, _, te in t.epochs if not np.isnan(te)]
        te = [te for _, _, te in t.epochs if not np.isnan(te)]
        if ep:
            ax.plot(ep, te, marker="o", ms=3, lw=1, label=f"{t.metric} seed {t.seed}")
            plotted += 1
    ax.set_xlabel("epoch")
    ax.set_ylabel("test accuracy")
    if 0 < plotted <= 10:
        ax.legend(fontsize=6, frameon=False)
    return _finish(fig, ax, path)


def correlation_figure(corr_rows, path):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    series = {}
    for layer, axis, d, corr, _ in corr_rows:
        series.setdefault((layer, axis), []).append((d, corr))
    for (layer, axis), pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts],
                ls="-" if axis == "output" else "--", lw=1, label=f"{layer} ({axis})")
    ax.axhline(0.0, color="0.6", lw=0.5)
    ax.set_xlabel("|i - j|")
    ax.set_ylabel("mean correlation")
    ax.legend(fontsize=6, frameon=False)
    return _finish(fig, ax, path)


def trial_figures(trials, corr_rows, out_dir):
    files = {"accuracy_png": accuracy_figure(trials, os.path.join(out_dir, "accuracy.png"))}
    if corr_rows:
        files["correlation_png"] = correlation_figure(
            corr_rows, os.path.join(out_dir, "correlation.png"))
    return files


def sweep_figure(rows, path):
    """rows: (metric, lam, mean, std, n)."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    by_metric = {}
    for metric, lam, mean, std, _ in rows:
        by_metric.setdefault(metric, []).append((lam, mean, std))
    for metric, pts in sorted(by_metric.items()):
        pts.sort()
        ax.errorbar([p[0] for p in pts], [p[1] for p in pts], yerr=[p[2] for p in pts],
                    marker="o", ms=3, lw=1, capsize=2, label=metric)
    ax.set_xlabel("lambda")
    ax.set_ylabel("final test accuracy")
    ax.legend(fontsize=7, frameon=False)
    return _finish(fig, ax, path)


def kernel_figure(lam, n_out, path):
    from cdg.precondition import (
        discrete_green_row,
        kernel_K,
        kernel_K_green,
        kernel_Ktilde,
    )

    o = np.linspace(0.0, 1.0, 201)
    x = np.arange(n_out) / n_out
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(o, kernel_Ktilde(o, lam), lw=1.2, label="K~ (tilde-H1)")
    ax.plot(o, kernel_K(o, lam), lw=1.2, label="K as printed (H1)")
    ax.plot(o, kernel_K_green(o, lam), lw=1.2, ls="--", label="periodic Green's fn (H1)")
    ax.plot(x, discrete_green_row("sobolev_tilde_h1", n_out, lam), "k.", ms=2,
            label=f"discrete tilde-H1, O={n_out}")
    ax.plot(x, discrete_green_row("sobolev_h1", n_out, lam), "r.", ms=2,
            label=f"discrete H1, O={n_out}")
    ax.set_xlabel("o")
    ax.set_ylabel("kernel")
    ax.legend(fontsize=6, frameon=False)
    return _finish(fig, ax, path)
