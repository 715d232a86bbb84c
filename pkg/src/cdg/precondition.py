"""Channel-directed gradients computed from a raw (H0) gradient tensor.

Every operator acts independently on each fiber ``f[:, i, h, w]`` along the
output-channel axis with periodic boundary conditions.  The Sobolev operators
return the exact solution of the discrete periodic system, so residual and
duality checks hold to rounding error:

* ``sobolev_h1``:       (Id - lam O^2 D2) g = f
* ``sobolev_tilde_h1``: gbar - lam O^2 D2 g = f, with gbar = fbar

where D2 is the periodic second difference along O.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import circulant, solve_banded

from cdg.errors import InvalidArgument
from cdg.tensor import (
    as_tensor4,
    channel_mean,
    derasterize,
    inverse_perm,
    rasterize,
    transpose_axes,
)

METRICS = (
    "identity",
    "reweighted_h0",
    "reweighted_h0_code_variant",
    "sobolev_h1",
    "sobolev_tilde_h1",
    "laplacian_rasterized",
)
SOBOLEV_METRICS = ("sobolev_h1", "sobolev_tilde_h1")
AXES = {"output": 0, "input": 1}


def _check_positive(name, value):
    if not (np.isfinite(value) and value > 0):
        raise InvalidArgument(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class PrecondConfig:
    metric: str = "identity"
    lam: float = 1.0
    beta: float = 1.0
    axis: str = "output"
    rasterize: bool = False
    sigma: float = 1.0

    def __post_init__(self):
        if self.metric not in METRICS:
            raise InvalidArgument(
                f"unknown metric {self.metric!r}; choose from {', '.join(METRICS)}"
            )
        _check_positive("lambda", self.lam)
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise InvalidArgument(f"blend beta must be >= 0, got {self.beta}")
        if self.axis not in AXES:
            raise InvalidArgument(f"axis must be 'output' or 'input', got {self.axis!r}")
        _check_positive("sigma", self.sigma)

    def with_(self, **changes):
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# Fiber helpers
# ---------------------------------------------------------------------------


def _fibers(f):
    """(O, I, H, W) -> (O, I*H*W) view."""
    return f.reshape(f.shape[0], -1)


def second_difference(g):
    """Periodic second difference along axis 0: g[o-1] - 2 g[o] + g[o+1]."""
    return np.roll(g, 1, axis=0) - 2.0 * g + np.roll(g, -1, axis=0)


def solve_cyclic_tridiagonal(diag, off, rhs):
    """Solve the symmetric circulant tridiagonal system with constant coefficients.

    The matrix has ``diag`` on the main diagonal and ``off`` on both
    off-diagonals and in the two periodic corners; ``rhs`` has shape (n, m).
    Uses a rank-one (Sherman-Morrison) correction of a plain tridiagonal solve,
    O(n) per column.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    n = rhs.shape[0]
    if n == 1:
        return rhs / (diag + 2.0 * off)
    gamma = -diag
    banded = np.zeros((3, n))
    banded[0, 1:] = off
    banded[1, :] = diag
    banded[2, :-1] = off
    # T = A - u v^T with u = (gamma, 0, ..., off), v = (1, 0, ..., off/gamma)
    banded[1, 0] = diag - gamma
    banded[1, -1] = diag - off * off / gamma
    u = np.zeros(n)
    u[0] = gamma
    u[-1] = off
    both = solve_banded((1, 1), banded, np.column_stack([rhs, u]), check_finite=False)
    y, z = both[:, :-1], both[:, -1]
    vy = y[0] + (off / gamma) * y[-1]
    vz = z[0] + (off / gamma) * z[-1]
    return y - np.outer(z, vy / (1.0 + vz))


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def reweighted_h0(f, lam):
    """Re-weight the channel-mean (translation) and deformation parts: fbar + (f - fbar)/lam."""
    _check_positive("lambda", lam)
    f = as_tensor4(f)
    if lam == 1.0:
        # exact identity; skips the rounding of mean + (f - mean)
        return f.copy()
    mean = channel_mean(f)
    return mean + (f - mean) / lam


def reweighted_h0_code_variant(f, lam):
    """Literal ``grad += lam * mean(grad, 0)`` update: f + lam * fbar.

    Equals ``(1 + lam) * reweighted_h0(f, 1 + lam)``, i.e. a rescaled and
    reparameterized version of the canonical operator.
    """
    _check_positive("lambda", lam)
    f = as_tensor4(f)
    return f + lam * channel_mean(f)


def sobolev_h1(f, lam):
    """Solve (Id - lam O^2 D2) g = f along axis 0 (cyclic tridiagonal, O(O) per fiber)."""
    _check_positive("lambda", lam)
    f = as_tensor4(f)
    n_out = f.shape[0]
    if n_out < 2:
        return f.copy()
    s = lam * n_out**2
    g = solve_cyclic_tridiagonal(1.0 + 2.0 * s, -s, _fibers(f))
    return g.reshape(f.shape)


def sobolev_tilde_h1(f, lam):
    """Solve gbar - lam O^2 D2 g = f along axis 0 by two cumulative sums.

    With gbar = fbar the system reduces to D2 u = (fbar - f) / (lam O^2) for the
    zero-mean part u = g - fbar.  Writing d[o] = u[o+1] - u[o], the second
    difference is d[o] - d[o-1], so d is a running sum of the right-hand side
    plus a constant fixed by periodicity (sum of d is 0), and u is a running
    sum of d plus a constant fixed by the zero-mean condition.
    """
    _check_positive("lambda", lam)
    f = as_tensor4(f)
    n_out = f.shape[0]
    if n_out < 2:
        return f.copy()
    fib = _fibers(f)
    mean = fib.mean(axis=0)
    r = (mean - fib) / (lam * n_out**2)
    d = np.cumsum(r, axis=0)
    d -= d.mean(axis=0)
    u = np.empty_like(d)
    u[0] = 0.0
    np.cumsum(d[:-1], axis=0, out=u[1:])
    u -= u.mean(axis=0)
    return (u + mean).reshape(f.shape)


def laplacian_rasterized(f, sigma):
    """Rasterize, solve (Id - sigma D2) g = f on the flat vector, restore shape."""
    _check_positive("sigma", sigma)
    f = as_tensor4(f)
    v = rasterize(f).reshape(-1, 1)
    if v.shape[0] < 2:
        return f.copy()
    g = solve_cyclic_tridiagonal(1.0 + 2.0 * sigma, -sigma, v)
    return derasterize(g, f.shape)


# ---------------------------------------------------------------------------
# Continuum kernels and the dense convolution oracle
# ---------------------------------------------------------------------------


def _check_unit(o):
    o = np.asarray(o, dtype=np.float64)
    if np.any((o < 0) | (o > 1)) or not np.all(np.isfinite(o)):
        raise InvalidArgument("kernel argument must lie in [0, 1]")
    return o


def kernel_K(o, lam):
    """H1 kernel exactly as printed: cosh((o - 1/2)/sqrt(lam)) / (2 sinh(1/sqrt(lam)))."""
    _check_positive("lambda", lam)
    o = _check_unit(o)
    a = lam**-0.5
    return np.cosh(a * (o - 0.5)) / (2.0 * np.sinh(a))


def kernel_K_green(o, lam):
    """Periodic Green's function of (Id - lam d^2/do^2) on [0, 1]; integrates to 1."""
    _check_positive("lambda", lam)
    o = _check_unit(o)
    a = lam**-0.5
    return a * np.cosh(a * (o - 0.5)) / (2.0 * np.sinh(a / 2.0))


def kernel_Ktilde(o, lam):
    """tilde-H1 kernel: 1 + (o^2 - o + 1/6) / (2 lam)."""
    _check_positive("lambda", lam)
    o = _check_unit(o)
    return 1.0 + (o * o - o + 1.0 / 6.0) / (2.0 * lam)


def sampled_kernel(kernel, n_out, lam):
    """Sample a kernel at o = m/O, m = 0..O-1."""
    return kernel(np.arange(n_out) / n_out, lam)


def conv_oracle(f, kernel):
    """Dense circular convolution along axis 0 with weight 1/O per sample.

    ``g[o] = (1/O) * sum_t kernel[(o - t) mod O] * f[t]``.  O(O^2) per fiber;
    for verification only.
    """
    f = as_tensor4(f)
    kernel = np.asarray(kernel, dtype=np.float64).ravel()
    n_out = f.shape[0]
    if kernel.size != n_out:
        raise InvalidArgument(
            f"kernel length {kernel.size} does not match O={n_out}"
        )
    c = circulant(kernel) / n_out
    return (c @ _fibers(f)).reshape(f.shape)


def discrete_green_row(metric, n_out, lam):
    """Response of a Sobolev operator to a unit impulse at o=0, scaled by O.

    Comparable with the continuum kernels sampled at o = m/O.
    """
    delta = np.zeros((n_out, 1, 1, 1))
    delta[0] = 1.0
    op = {"sobolev_h1": sobolev_h1, "sobolev_tilde_h1": sobolev_tilde_h1}[metric]
    return n_out * op(delta, lam).ravel()


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


def _apply_metric(f, cfg):
    m = cfg.metric
    if m == "identity":
        return f.copy()
    if m == "reweighted_h0":
        return reweighted_h0(f, cfg.lam)
    if m == "reweighted_h0_code_variant":
        return reweighted_h0_code_variant(f, cfg.lam)
    if m == "sobolev_h1":
        return sobolev_h1(f, cfg.lam)
    if m == "sobolev_tilde_h1":
        return sobolev_tilde_h1(f, cfg.lam)
    return laplacian_rasterized(f, cfg.sigma)


def precondition(f, cfg):
    """Map a raw gradient tensor to the channel-directed gradient for ``cfg``.

    The chosen axis is moved to the front (or the tensor is rasterized), the
    operator is applied, and the layout is restored.  Sobolev metrics are
    blended with the raw gradient: ``g + beta * f``.
    """
    f = as_tensor4(f)
    if cfg.metric == "identity":
        return f.copy()
    perm = (AXES[cfg.axis], *(a for a in range(4) if a != AXES[cfg.axis]))
    work = transpose_axes(f, perm) if cfg.axis != "output" else f
    if cfg.rasterize and cfg.metric != "laplacian_rasterized":
        g = derasterize(_apply_metric(rasterize(work), cfg), work.shape)
    else:
        g = _apply_metric(work, cfg)
    if cfg.axis != "output":
        g = transpose_axes(g, inverse_perm(perm))
    if cfg.metric in SOBOLEV_METRICS and cfg.beta:
        g = g + cfg.beta * f
    return g


def operator_norm_bound(cfg):
    """Upper bound on the largest eigenvalue of ``precondition(., cfg)``."""
    m = cfg.metric
    if m in ("identity", "laplacian_rasterized"):
        return 1.0
    if m == "reweighted_h0":
        return max(1.0, 1.0 / cfg.lam)
    if m == "reweighted_h0_code_variant":
        return 1.0 + cfg.lam
    if m == "sobolev_h1":
        return 1.0 + cfg.beta
    # non-constant modes of tilde-H1 scale by 1/(lam O^2 4 sin^2(pi k/O)) <= 1/(16 lam)
    return max(1.0, 1.0 / (16.0 * cfg.lam)) + cfg.beta
