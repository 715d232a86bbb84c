"""Run configuration and the train / sweep / ablate drivers.

A run config is a flat ``key = value`` text file (``#`` starts a comment).
Every key can be overridden from the command line.  Results are fully
determined by the config and the seed; the output directory only decides
where files go.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from cdg import analysis, data, nn
from cdg.errors import InvalidArgument
from cdg.optim import Optimizer, lr_schedule
from cdg.precondition import METRICS, PrecondConfig, operator_norm_bound
from cdg.tensor import as_layer_tensor

log = logging.getLogger(__name__)

TASKS = ("mnist", "fashion_mnist", "synthetic")
CONV_LAYERS = ("conv1.weight", "conv2.weight")


def _bool(s):
    s = str(s).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise InvalidArgument(f"not a boolean: {s!r}")


def _ints(s):
    if isinstance(s, (list, tuple)):
        return [int(v) for v in s]
    return [int(v) for v in str(s).replace(",", " ").split()]


def _floats(s):
    if isinstance(s, (list, tuple)):
        return [float(v) for v in s]
    return [float(v) for v in str(s).replace(",", " ").split()]


@dataclass
class RunConfig:
    task: str = "mnist"
    data_dir: str = ""
    train_n: int = 2000
    test_n: int = 10000
    test_source: str = "opposite"   # "opposite" partition file, or "remainder"
    data_seed: int = 0
    optimizer: str = "sgd"
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    metric: str = "identity"
    lam: float = 1.0
    beta: float = 1.0
    axis: str = "output"
    rasterize: bool = False
    sigma: float = 1.0
    layers: str = "conv"            # "conv": conv weights only; "all": dense weight too
    epochs: int = 20
    batch_size: int = 100
    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    lr_period: int = 40
    eval_every: int = 1
    dtype: str = "float32"
    c1: int = 50
    c2: int = 100
    max_d: int = 10
    synthetic_dims: list = field(default_factory=lambda: [16, 8, 3, 3])
    steps_per_epoch: int = 100
    workers: int = 1
    out_dir: str = "runs/latest"

    # config-file key -> attribute
    ALIASES = {"lambda": "lam", "data-dir": "data_dir", "out-dir": "out_dir"}

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.task not in TASKS:
            raise InvalidArgument(f"task must be one of {TASKS}, got {self.task!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidArgument(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if not self.seeds:
            raise InvalidArgument("seeds must be nonempty")
        if self.epochs < 1:
            raise InvalidArgument(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidArgument(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lam < 0:
            raise InvalidArgument(f"lambda must be >= 0, got {self.lam}")
        if not self.lr > 0:
            raise InvalidArgument(f"lr must be positive, got {self.lr}")
        if self.layers not in ("conv", "all"):
            raise InvalidArgument(f"layers must be conv or all, got {self.layers!r}")
        if self.dtype not in ("float32", "float64"):
            raise InvalidArgument(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.test_source not in ("opposite", "remainder"):
            raise InvalidArgument("test_source must be opposite or remainder")
        if self.eval_every < 1:
            raise InvalidArgument("eval_every must be >= 1")
        self.precond()  # validates metric, lambda, beta, axis, sigma

    def precond(self):
        """PrecondConfig for this run; lambda = 0 means plain SGD (identity metric)."""
        metric, lam = self.metric, self.lam
        if lam == 0:
            if metric != "laplacian_rasterized":
                metric = "identity"
            lam = 1.0
        return PrecondConfig(metric=metric, lam=lam, beta=self.beta, axis=self.axis,
                             rasterize=self.rasterize, sigma=self.sigma)

    @property
    def label(self):
        return self.precond().metric

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    def echo(self):
        """Config echo for reports: everything except where output goes and parallelism."""
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("workers")
        return d

    def numeric_key(self):
        """Hash of everything that affects numbers (excludes out_dir and workers)."""
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("workers")
        d.pop("data_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_CONVERT = {
    "seeds": _ints, "synthetic_dims": _ints, "rasterize": _bool,
}


def coerce(key, value):
    key = RunConfig.ALIASES.get(key, key).replace("-", "_")
    if key not in _FIELDS:
        raise InvalidArgument(f"unknown config key {key!r}")
    if key in _CONVERT:
        return key, _CONVERT[key](value)
    default = _FIELDS[key].default
    if isinstance(default, bool):
        return key, _bool(value)
    if isinstance(default, int):
        return key, int(value)
    if isinstance(default, float):
        return key, float(value)
    return key, str(value)


def parse_config_text(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"config line {lineno}: expected key = value: {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            k, v = coerce(key, value)
        except ValueError as exc:
            raise InvalidArgument(f"config line {lineno}: {exc}") from None
        values[k] = v
    return values


def load_config(path=None, overrides=None):
    values = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        k, v = coerce(key, value)
        values[k] = v
    if not values.get("data_dir"):
        values["data_dir"] = os.environ.get("CDG_DATA_DIR", "")
    return RunConfig(**values)


def dump_config(cfg):
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        key = "lambda" if k == "lam" else k
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


def load_datasets(cfg):
    """Train/test sets for an image task.  Missing files raise OSError before any compute."""
    if not cfg.data_dir:
        raise FileNotFoundError("no data directory: pass --data-dir or set CDG_DATA_DIR")
    pool_paths = data.dataset_paths(cfg.data_dir, cfg.task, "t10k")
    other_paths = data.dataset_paths(cfg.data_dir, cfg.task, "train")
    needed = pool_paths + (other_paths if cfg.test_source == "opposite" else ())
    for p in needed:
        if not os.path.isfile(p):
            raise FileNotFoundError(f"missing data file: {p}")
    pool = data.load_idx(*pool_paths)
    train, rest = data.inverted_split(pool, min(cfg.train_n, len(pool.labels)), cfg.data_seed)
    if cfg.test_source == "opposite":
        test = data.take(data.load_idx(*other_paths), cfg.test_n, cfg.data_seed)
    else:
        test = data.take(rest, cfg.test_n, cfg.data_seed)
    return train, test


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _hyper(cfg):
    return dict(lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
                beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)


def precond_map(cfg, names):
    pc = cfg.precond()
    if pc.metric == "identity":
        return {}
    chosen = set(CONV_LAYERS)
    if cfg.layers == "all":
        chosen.add("dense.weight")
    return {n: pc for n in names if n in chosen}


def _final_correlations(params, cfg):
    rows = []
    for layer in CONV_LAYERS:
        w = np.asarray(params[layer], dtype=np.float64)
        for axis in ("output", "input"):
            if w.shape[analysis.AXIS_INDEX[axis]] < 2:
                continue
            for d, c in analysis.correlation_curve(w, axis, cfg.max_d):
                rows.append((layer.split(".")[0], axis, d, c.mean, c.n_pairs))
    return rows


def train_trial(cfg, seed, datasets=None):
    if cfg.task == "synthetic":
        return _train_synthetic(cfg, seed)
    train, test = datasets if datasets is not None else load_datasets(cfg)
    dtype = np.dtype(cfg.dtype)
    train_x = train.images.astype(dtype)
    test_x = test.images.astype(dtype)
    params = nn.init_params(seed, cfg.c1, cfg.c2, dtype=dtype)
    opt = Optimizer(cfg.optimizer, _hyper(cfg), precond_map(cfg, params))
    rng = np.random.default_rng([seed, 1])
    report = analysis.TrialReport(seed=seed, metric=cfg.label, config=cfg.echo())
    n = len(train.labels)
    loss = float("nan")
    for epoch in range(cfg.epochs):
        scale = lr_schedule(epoch, cfg.lr_period)
        for idx in data.batches(n, cfg.batch_size, rng):
            loss, grads = nn.loss_and_grads(params, nn.Batch(train_x[idx], train.labels[idx]))
            if not math.isfinite(loss):
                raise FloatingPointError(f"loss diverged at epoch {epoch + 1} (seed {seed})")
            params = opt.step(params, grads, scale)
        if (epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs:
            tr = nn.accuracy(params, train_x, train.labels)
            te = nn.accuracy(params, test_x, test.labels)
        else:
            tr = te = float("nan")
        report.epochs.append((epoch + 1, tr, te))
        log.info("seed %d epoch %d loss %.4f train %.4f test %.4f", seed, epoch + 1, loss, tr, te)
    report.final_loss = loss
    report.correlations = _final_correlations(params, cfg)
    report.params = params
    return report


def _train_synthetic(cfg, seed):
    """Gradient flow on L(X) = 0.5||X - X*||^2; lr is divided by the operator norm bound."""
    task = data.synthetic_quadratic(cfg.synthetic_dims, cfg.data_seed)
    pc = cfg.precond()
    x = np.random.default_rng(seed).standard_normal(task.dims)
    opt = Optimizer(cfg.optimizer, _hyper(cfg.replace(lr=cfg.lr / operator_norm_bound(pc))),
                    {"x": pc} if pc.metric != "identity" else {})
    report = analysis.TrialReport(seed=seed, metric=cfg.label, config=cfg.echo())
    params = {"x": x}
    for epoch in range(cfg.epochs):
        scale = lr_schedule(epoch, cfg.lr_period)
        for _ in range(cfg.steps_per_epoch):
            params = opt.step(params, {"x": task.grad(params["x"])}, scale)
        report.epochs.append((epoch + 1, float("nan"), float("nan")))
    report.final_loss = task.loss(params["x"])
    report.correlations = [
        ("x", axis, d, c.mean, c.n_pairs)
        for axis in ("output", "input")
        if task.dims[analysis.AXIS_INDEX[axis]] > 1
        for d, c in analysis.correlation_curve(params["x"], axis, cfg.max_d)
    ]
    report.params = params
    return report


def _trial_worker(args):
    cfg, seed = args
    r = train_trial(cfg, seed)
    del r.params
    return r


def run_trials(cfg):
    """One TrialReport per seed, in seed order."""
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        if cfg.task != "synthetic":
            load_datasets(cfg)  # fail on missing files before spawning
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            return list(ex.map(_trial_worker, [(cfg, s) for s in cfg.seeds]))
    datasets = None if cfg.task == "synthetic" else load_datasets(cfg)
    return [train_trial(cfg, s, datasets) for s in cfg.seeds]


def save_final_tensors(trials, out_dir):
    from cdg import tensor

    for t in trials:
        params = getattr(t, "params", None) or {}
        for name, w in params.items():
            if np.ndim(w) in (2, 4):
                tensor.save(os.path.join(out_dir, f"seed{t.seed}_{name}.cdg"),
                            as_layer_tensor(np.asarray(w, dtype=np.float64)))


def cmd_train(cfg, figures=True, save_tensors=False):
    trials = run_trials(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    files = analysis.emit_report(trials, cfg.out_dir, figures=figures)
    with open(os.path.join(cfg.out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg.replace(out_dir="")))
    if save_tensors:
        save_final_tensors(trials, cfg.out_dir)
    return trials, files


def cached_train(cfg, cache_root, figures=True):
    """cmd_train, reusing a previous run of the same numeric config under ``cache_root``."""
    out = os.path.join(cache_root, f"{cfg.label}-{cfg.numeric_key()}")
    cfg = cfg.replace(out_dir=out)
    if os.path.isfile(os.path.join(out, "summary.json")):
        return load_report(out), out
    trials, _ = cmd_train(cfg, figures=figures)
    return trials, out


def load_report(out_dir):
    """Rebuild TrialReports from accuracy.csv and summary.json."""
    with open(os.path.join(out_dir, "summary.json"), encoding="utf-8") as fh:
        summary = json.load(fh)
    rows = analysis.read_csv(os.path.join(out_dir, "accuracy.csv"))
    trials = []
    for t in summary["trials"]:
        r = analysis.TrialReport(seed=t["seed"], metric=t["metric"], config=summary["config"])
        r.epochs = [
            (int(row["epoch"]), float(row["train_acc"]), float(row["test_acc"]))
            for row in rows
            if int(row["seed"]) == t["seed"] and row["metric"] == t["metric"]
        ]
        r.correlations = [tuple(c) for c in t["correlations"]]
        r.final_loss = t["final_loss"] if t["final_loss"] is not None else float("nan")
        trials.append(r)
    return trials


# ---------------------------------------------------------------------------
# Sweeps and ablations
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ("metric", "lambda", "mean_acc", "std_acc", "n_trials")
ABLATION_COLUMNS = ("direction", "metric", "mean_acc", "std_acc", "n_trials")


def _row_stats(trials):
    s = analysis.trial_stats([t.final_test_acc for t in trials])
    return s.mean, s.std, s.n


def cmd_sweep(cfg, lambdas, metrics=("sobolev_tilde_h1", "reweighted_h0_code_variant"),
              figures=True, cache_root=None):
    lambdas = _floats(lambdas)
    if not lambdas:
        raise InvalidArgument("lambda list must be nonempty")
    for m in metrics:
        if m not in METRICS:
            raise InvalidArgument(f"unknown metric {m!r}")
    os.makedirs(cfg.out_dir, exist_ok=True)
    cache_root = cache_root or os.path.join(cfg.out_dir, "runs")
    rows, done = [], {}
    for metric in metrics:
        for lam in lambdas:
            run = cfg.replace(metric=metric, lam=lam)
            key = run.numeric_key() if lam != 0 else cfg.replace(metric="identity", lam=0.0).numeric_key()
            if key not in done:
                done[key], _ = cached_train(run, cache_root, figures=figures)
            rows.append((metric, lam, *_row_stats(done[key])))
    path = os.path.join(cfg.out_dir, "sweep.csv")
    analysis._write_csv(path, SWEEP_COLUMNS, rows)
    files = {"sweep": path}
    if figures:
        from cdg import plotting

        files["sweep_png"] = plotting.sweep_figure(rows, os.path.join(cfg.out_dir, "sweep.png"))
    return rows, files


def ablation_cells(cfg):
    """(direction, run config) for every cell of the direction ablation."""
    smooth = cfg.metric if cfg.metric in ("sobolev_tilde_h1", "sobolev_h1") else "sobolev_tilde_h1"
    lam = cfg.lam or 1.0
    return [
        ("sgd", cfg.replace(metric="identity", lam=1.0)),
        ("output", cfg.replace(metric=smooth, lam=lam, axis="output", rasterize=False)),
        ("input", cfg.replace(metric=smooth, lam=lam, axis="input", rasterize=False)),
        ("rasterized", cfg.replace(metric="laplacian_rasterized", axis="output", rasterize=True)),
        ("reweighted_output", cfg.replace(metric="reweighted_h0", lam=lam, axis="output",
                                          rasterize=False)),
    ]


def cmd_ablate_direction(cfg, figures=True, cache_root=None):
    os.makedirs(cfg.out_dir, exist_ok=True)
    cache_root = cache_root or os.path.join(cfg.out_dir, "runs")
    rows = []
    for direction, run in ablation_cells(cfg.replace(layers="conv")):
        trials, _ = cached_train(run, cache_root, figures=figures)
        rows.append((direction, run.precond().metric, *_row_stats(trials)))
    path = os.path.join(cfg.out_dir, "ablation.csv")
    analysis._write_csv(path, ABLATION_COLUMNS, rows)
    return rows, {"ablation": path}
