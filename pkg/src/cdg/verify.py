"""Self-checks run by ``cdg verify``: oracles, residuals, duality and invariants.

Each suite returns a list of ``Check(name, passed, detail)``.
"""

from __future__ import annotations

import time
from collections import namedtuple

import numpy as np

from cdg import metrics, nn
from cdg import precondition as pc
from cdg.tensor import channel_mean

Check = namedtuple("Check", ["name", "passed", "detail"])

LAMBDAS = (0.1, 1.0, 10.0)
OPERATORS = {
    "reweighted_h0": pc.reweighted_h0,
    "reweighted_h0_code_variant": pc.reweighted_h0_code_variant,
    "sobolev_h1": pc.sobolev_h1,
    "sobolev_tilde_h1": pc.sobolev_tilde_h1,
    "laplacian_rasterized": pc.laplacian_rasterized,
}
MEAN_PRESERVING = ("reweighted_h0", "sobolev_h1", "sobolev_tilde_h1")


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _random_tensor(rng, n_out=None):
    o = int(rng.integers(2, 17)) if n_out is None else n_out
    dims = (o, *(int(v) for v in rng.integers(1, 4, size=3)))
    return rng.standard_normal(dims)


def second_difference_matrix(n):
    d2 = -2.0 * np.eye(n)
    for i in range(n):
        d2[i, (i - 1) % n] += 1.0
        d2[i, (i + 1) % n] += 1.0
    return d2


def dense_solve(matrix, f):
    """Solve ``matrix @ g = f`` along axis 0 with a dense LU factorization."""
    return np.linalg.solve(matrix, f.reshape(f.shape[0], -1)).reshape(f.shape)


def h1_matrix(n, lam):
    return np.eye(n) - lam * n * n * second_difference_matrix(n)


def tilde_h1_matrix(n, lam):
    # the channel-mean operator replaces the identity
    return np.full((n, n), 1.0 / n) - lam * n * n * second_difference_matrix(n)


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


def suite_oracle(rng, fibers=20, sizes=(2, 3, 8, 64, 257)):
    checks = []
    for lam in LAMBDAS:
        for n in sizes:
            f = rng.standard_normal((n, fibers, 1, 1))
            err_t = _rel(pc.sobolev_tilde_h1(f, lam), dense_solve(tilde_h1_matrix(n, lam), f))
            err_h = _rel(pc.sobolev_h1(f, lam), dense_solve(h1_matrix(n, lam), f))
            checks.append(Check(f"tilde_h1 O={n} lam={lam}", err_t <= 1e-9, f"rel {err_t:.2e}"))
            checks.append(Check(f"h1 O={n} lam={lam}", err_h <= 1e-10, f"rel {err_h:.2e}"))
    return checks


def suite_residual(rng, sizes=(2, 3, 8, 64, 257)):
    checks = []
    for lam in LAMBDAS:
        for n in sizes:
            f = rng.standard_normal((n, 6, 2, 2))
            s = lam * n * n
            g = pc.sobolev_h1(f, lam)
            r1 = np.linalg.norm(g - s * pc.second_difference(g) - f) / np.linalg.norm(f)
            g = pc.sobolev_tilde_h1(f, lam)
            r2 = np.linalg.norm(channel_mean(g) - s * pc.second_difference(g) - f)
            r2 /= np.linalg.norm(f)
            checks.append(Check(f"h1 residual O={n} lam={lam}", r1 <= 1e-10, f"{r1:.2e}"))
            checks.append(Check(f"tilde_h1 residual O={n} lam={lam}", r2 <= 1e-10, f"{r2:.2e}"))
    return checks


def duality_gap(rng, which, lam, n_out=None):
    f = _random_tensor(rng, n_out)
    k = rng.standard_normal(f.shape)
    if which == "h0_lambda":
        g = pc.reweighted_h0(f, lam)
        lhs = metrics.ip_h0_lambda(g, k, lam)
    elif which == "tilde_h1":
        g = pc.sobolev_tilde_h1(f, lam)
        lhs = metrics.ip_tilde_h1(g, k, lam)
    else:
        g = pc.sobolev_h1(f, lam)
        lhs = metrics.ip_h1(g, k, lam)
    gap = abs(lhs - metrics.ip_h0(f, k))
    return gap / (np.linalg.norm(f) * np.linalg.norm(k))


def suite_duality(rng, trials=1000):
    checks = []
    for which in ("h0_lambda", "tilde_h1", "h1"):
        worst = 0.0
        for _ in range(trials):
            lam = float(10 ** rng.uniform(-1, 1))
            worst = max(worst, duality_gap(rng, which, lam))
        checks.append(Check(f"duality {which}", worst <= 1e-9, f"worst {worst:.2e}"))
    return checks


def suite_kernel(rng, lam=1.0, sizes=(64, 128, 256)):
    checks, gaps = [], []
    for n in sizes:
        f = rng.standard_normal((n, 16, 1, 1))
        conv = pc.conv_oracle(f, pc.sampled_kernel(pc.kernel_Ktilde, n, lam))
        gaps.append(_rel(conv, pc.sobolev_tilde_h1(f, lam)))
    decreasing = all(b < a for a, b in zip(gaps, gaps[1:]))
    checks.append(Check("tilde_h1 kernel gap decreases", decreasing,
                        " -> ".join(f"{g:.2e}" for g in gaps)))
    checks.append(Check(f"tilde_h1 kernel gap O={sizes[-1]} <= 2%", gaps[-1] <= 0.02,
                        f"{gaps[-1]:.2e}"))
    rep = h1_kernel_report(sizes[-1], lam)
    checks.append(Check("h1 kernel comparison reported", True,
                        f"printed {rep['printed']:.3e}, green {rep['green']:.3e}, "
                        f"matches {rep['match']}"))
    return checks


def h1_kernel_report(n_out, lam):
    """Max relative deviation of the discrete H1 impulse response from each kernel form."""
    row = pc.discrete_green_row("sobolev_h1", n_out, lam)
    x = np.arange(n_out) / n_out
    scale = np.abs(row).max()
    printed = float(np.abs(row - pc.kernel_K(x, lam)).max() / scale)
    green = float(np.abs(row - pc.kernel_K_green(x, lam)).max() / scale)
    return {"printed": printed, "green": green,
            "match": "green" if green < printed else "printed"}


def suite_descent(rng, trials=1000):
    checks = []
    for name, op in OPERATORS.items():
        for lam in LAMBDAS:
            worst = np.inf
            for _ in range(trials):
                f = _random_tensor(rng)
                val = metrics.ip_h0(f, op(f, lam)) / metrics.ip_h0(f, f)
                worst = min(worst, val)
            checks.append(Check(f"descent {name} lam={lam}", worst > 0,
                                f"min <f,Pf>/|f|^2 = {worst:.3e}"))
    return checks


def suite_invariants(rng, trials=200):
    checks = []
    for name, op in OPERATORS.items():
        lin, const, mean, smooth = 0.0, 0.0, 0.0, True
        for _ in range(trials):
            lam = float(rng.choice(LAMBDAS))
            a = _random_tensor(rng)
            b = rng.standard_normal(a.shape)
            al, be = rng.standard_normal(2)
            lin = max(lin, _rel(op(al * a + be * b, lam), al * op(a, lam) + be * op(b, lam)))
            if name == "laplacian_rasterized":
                c = np.full(a.shape, rng.standard_normal())
            else:
                c = np.broadcast_to(rng.standard_normal((1, *a.shape[1:])), a.shape).copy()
            if name != "reweighted_h0_code_variant":
                const = max(const, _rel(op(c, lam), c))
            g = op(a, lam)
            if name in MEAN_PRESERVING:
                mean = max(mean, float(np.abs(channel_mean(g) - channel_mean(a)).max()))
            if name in ("sobolev_h1", "sobolev_tilde_h1"):
                da = np.sum(metrics.forward_difference(a) ** 2)
                dg = np.sum(metrics.forward_difference(g) ** 2)
                smooth &= bool(dg <= da * (1 + 1e-12))
        checks.append(Check(f"linearity {name}", lin <= 1e-10, f"{lin:.2e}"))
        if name != "reweighted_h0_code_variant":
            checks.append(Check(f"constant invariance {name}", const <= 1e-12, f"{const:.2e}"))
        if name in MEAN_PRESERVING:
            checks.append(Check(f"mean preservation {name}", mean <= 1e-12, f"{mean:.2e}"))
        if name in ("sobolev_h1", "sobolev_tilde_h1"):
            checks.append(Check(f"smoothing monotone {name}", smooth, ""))
    return checks


# ---------------------------------------------------------------------------
# CNN gradient check
# ---------------------------------------------------------------------------


def gradient_check(params, batch, rng, n_coords=200, h=1e-4, max_tries=20):
    """Central differences vs backprop on randomly sampled coordinates.

    A coordinate is accepted only when the ReLU masks and pool winners are the
    same at ``x - h`` and ``x + h`` (the loss is smooth on that interval);
    rejected draws are counted and redrawn.
    Returns {name: (max_rel_err, n_checked, n_rejected)}.
    """
    _, grads = nn.loss_and_grads(params, batch)
    base = nn.activation_pattern(params, batch)
    out = {}
    for name in nn.PARAM_NAMES:
        p = params[name]
        errs, rejected = [], 0
        while len(errs) < n_coords:
            if rejected > max_tries * n_coords:
                break
            idx = tuple(int(rng.integers(0, s)) for s in p.shape)
            old = p[idx]
            p[idx] = old + h
            lp, pat_p = nn.loss(params, batch), nn.activation_pattern(params, batch)
            p[idx] = old - h
            lm, pat_m = nn.loss(params, batch), nn.activation_pattern(params, batch)
            p[idx] = old
            if not (nn.same_pattern(base, pat_p) and nn.same_pattern(base, pat_m)):
                rejected += 1
                continue
            num = (lp - lm) / (2 * h)
            ana = float(grads[name][idx])
            den = max(abs(num), abs(ana))
            errs.append(0.0 if den == 0 else abs(num - ana) / den)
        out[name] = (max(errs) if errs else float("nan"), len(errs), rejected)
    return out


def gradcheck_setup(seed=0, batch_size=2):
    rng = np.random.default_rng(seed)
    params = nn.init_params(seed)
    for name in params:
        if name.endswith(".bias"):
            params[name] = rng.uniform(-0.05, 0.05, params[name].shape)
    images = rng.uniform(0.0, 1.0, (batch_size, 1, 28, 28))
    labels = rng.integers(0, 10, batch_size)
    return params, nn.Batch(images, labels), rng


def suite_gradcheck(rng, n_coords=200):
    params, batch, rng2 = gradcheck_setup(int(rng.integers(0, 2**31)))
    res = gradient_check(params, batch, rng2, n_coords=n_coords)
    return [
        Check(f"gradcheck {name}", n >= n_coords and err <= 1e-5,
              f"max rel {err:.2e} over {n} coords ({rej} rejected at kinks)")
        for name, (err, n, rej) in res.items()
    ]


SUITES = {
    "oracle": suite_oracle,
    "residual": suite_residual,
    "duality": suite_duality,
    "kernel": suite_kernel,
    "descent": suite_descent,
    "invariants": suite_invariants,
    "gradcheck": suite_gradcheck,
}


def run(names=None, seed=0, echo=print):
    """Run the named suites (all by default); returns (all_passed, {suite: checks})."""
    names = list(names or SUITES)
    results, ok = {}, True
    for name in names:
        rng = np.random.default_rng([seed, list(SUITES).index(name)])
        t0 = time.perf_counter()
        checks = SUITES[name](rng)
        passed = all(c.passed for c in checks)
        ok &= passed
        results[name] = checks
        if echo:
            echo(f"[{'PASS' if passed else 'FAIL'}] {name} "
                 f"({len(checks)} checks, {time.perf_counter() - t0:.1f}s)")
            for c in checks:
                if not c.passed:
                    echo(f"    FAIL {c.name}: {c.detail}")
    return ok, results
