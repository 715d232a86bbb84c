"""Tensor regularity, multi-trial statistics and CSV/JSON report emission."""

from __future__ import annotations

import csv
import json
import math
import os
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from cdg.errors import DegenerateResult, InvalidArgument
from cdg.tensor import as_tensor4

Correlation = namedtuple("Correlation", ["mean", "n_pairs", "n_skipped"])
TrialStats = namedtuple("TrialStats", ["mean", "std", "min", "max", "n", "std_defined"])

ACCURACY_COLUMNS = ("epoch", "seed", "metric", "train_acc", "test_acc")
CORRELATION_COLUMNS = ("layer", "axis", "d", "mean_corr", "n_pairs")
AXIS_INDEX = {"output": 0, "input": 1}


def fmt(x):
    """17 significant digits: parses back to the identical float."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def channel_correlation(x, axis, d):
    """Mean Pearson correlation between slices ``|i - j| = d`` apart along ``axis``.

    Each slice is flattened over the other three axes and mean-centered.
    Pairs involving a zero-variance slice are skipped.
    """
    x = as_tensor4(x)
    ax = AXIS_INDEX.get(axis, axis)
    if ax not in (0, 1, 2, 3):
        raise InvalidArgument(f"bad axis {axis!r}")
    n = x.shape[ax]
    if not 1 <= d < n:
        raise InvalidArgument(f"distance d={d} must lie in [1, {n - 1}]")
    slices = np.moveaxis(x, ax, 0).reshape(n, -1)
    centered = slices - slices.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.sum(centered * centered, axis=1))
    a, b = centered[:-d], centered[d:]
    na, nb = norms[:-d], norms[d:]
    ok = (na > 0) & (nb > 0)
    if not np.any(ok):
        raise DegenerateResult(f"all {len(ok)} slice pairs at d={d} have zero variance")
    corr = np.sum(a[ok] * b[ok], axis=1) / (na[ok] * nb[ok])
    corr = np.clip(corr, -1.0, 1.0)
    return Correlation(float(corr.mean()), int(ok.sum()), int((~ok).sum()))


def correlation_curve(x, axis, max_d):
    out = []
    n = as_tensor4(x).shape[AXIS_INDEX.get(axis, axis)]
    for d in range(1, min(max_d, n - 1) + 1):
        try:
            out.append((d, channel_correlation(x, axis, d)))
        except DegenerateResult:
            out.append((d, Correlation(float("nan"), 0, n - d)))
    return out


def trial_stats(values):
    """Mean, unbiased (n-1) std, min, max.  A single value gets std 0 with std_defined=False."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise InvalidArgument("trial_stats needs at least one value")
    if v.size == 1:
        return TrialStats(float(v[0]), 0.0, float(v[0]), float(v[0]), 1, False)
    return TrialStats(float(v.mean()), float(v.std(ddof=1)), float(v.min()),
                      float(v.max()), int(v.size), True)


@dataclass
class TrialReport:
    seed: int
    metric: str
    config: dict
    epochs: list = field(default_factory=list)        # (epoch, train_acc, test_acc)
    correlations: list = field(default_factory=list)  # (layer, axis, d, mean_corr, n_pairs)
    final_loss: float = float("nan")

    @property
    def final_test_acc(self):
        for _, _, acc in reversed(self.epochs):
            if not math.isnan(acc):
                return acc
        return float("nan")


def _write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def aggregate_correlations(trials):
    """Average each (layer, axis, d) correlation over trials; n_pairs summed."""
    acc = {}
    for t in trials:
        for layer, axis, d, corr, n_pairs in t.correlations:
            key = (layer, axis, d)
            vals, n = acc.get(key, ([], 0))
            if n_pairs:
                vals.append(corr)
            acc[key] = (vals, n + n_pairs)
    rows = []
    for (layer, axis, d), (vals, n) in acc.items():
        rows.append((layer, axis, d, float(np.mean(vals)) if vals else float("nan"), n))
    return rows


def summarize(trials):
    by_metric = {}
    for t in trials:
        by_metric.setdefault(t.metric, []).append(t)
    out = {}
    for metric, ts in by_metric.items():
        finals = [t.final_test_acc for t in ts]
        s = trial_stats(finals)
        out[metric] = {
            "final_test_acc_mean": s.mean,
            "final_test_acc_std": s.std,
            "std_defined": s.std_defined,
            "n_trials": s.n,
            "final_test_acc": finals,
            "seeds": [t.seed for t in ts],
        }
    return out


def emit_report(trials, path, figures=True):
    """Write accuracy.csv, correlation.csv and summary.json (plus PNG figures) under ``path``."""
    trials = list(trials)
    if not trials:
        raise InvalidArgument("emit_report needs at least one trial")
    os.makedirs(path, exist_ok=True)
    acc_rows = [
        (epoch, t.seed, t.metric, tr, te)
        for t in trials
        for epoch, tr, te in t.epochs
    ]
    files = {
        "accuracy": os.path.join(path, "accuracy.csv"),
        "correlation": os.path.join(path, "correlation.csv"),
        "summary": os.path.join(path, "summary.json"),
    }
    _write_csv(files["accuracy"], ACCURACY_COLUMNS, acc_rows)
    corr_rows = aggregate_correlations(trials)
    _write_csv(files["correlation"], CORRELATION_COLUMNS, corr_rows)
    summary = {
        "config": trials[0].config,
        "metrics": summarize(trials),
        "trials": [
            {"seed": t.seed, "metric": t.metric, "final_test_acc": t.final_test_acc,
             "final_loss": t.final_loss, "correlations": t.correlations}
            for t in trials
        ],
    }
    with open(files["summary"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if figures:
        from cdg import plotting

        files.update(plotting.trial_figures(trials, corr_rows, path))
    return files


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
