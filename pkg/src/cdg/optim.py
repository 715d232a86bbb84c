"""SGD (momentum, weight decay) and Adam driven by preconditioned gradients.

One forward-Euler step of the gradient flow ``dX/dt = -grad_m L(X)`` per
call.  The raw loss gradient is preconditioned first; weight decay and the
momentum/moment buffers act on the preconditioned gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cdg.errors import InvalidArgument
from cdg.precondition import precondition
from cdg.tensor import as_layer_tensor


@dataclass
class OptimState:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    buf: np.ndarray | None = None
    exp_avg: np.ndarray | None = None
    exp_avg_sq: np.ndarray | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidArgument(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise InvalidArgument(f"momentum must lie in [0, 1), got {self.momentum}")
        if not self.weight_decay >= 0:
            raise InvalidArgument(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidArgument("Adam betas must lie in [0, 1)")
        if not self.eps > 0:
            raise InvalidArgument(f"eps must be positive, got {self.eps}")


def precondition_grad(raw_grad, cfg):
    """Apply ``cfg`` to a gradient of any supported rank (4-D, dense 2-D, 1-D)."""
    raw_grad = np.asarray(raw_grad, dtype=np.float64)
    if cfg is None or cfg.metric == "identity":
        return raw_grad.copy()
    g = precondition(as_layer_tensor(raw_grad), cfg)
    return g.reshape(raw_grad.shape)


def _check_shapes(param, raw_grad):
    if np.shape(param) != np.shape(raw_grad):
        raise InvalidArgument(
            f"shape mismatch: param {np.shape(param)} vs grad {np.shape(raw_grad)}"
        )


def sgd_step(param, raw_grad, state, precond_cfg=None, lr_scale=1.0):
    _check_shapes(param, raw_grad)
    param = np.asarray(param, dtype=np.float64)
    g = precondition_grad(raw_grad, precond_cfg)
    if state.weight_decay:
        g = g + state.weight_decay * param
    if state.momentum:
        # no dampening, buffer starts at zero so the first step equals g
        state.buf = g.copy() if state.buf is None else state.momentum * state.buf + g
        g = state.buf
    state.step += 1
    return param - state.lr * lr_scale * g, state


def adam_step(param, raw_grad, state, precond_cfg=None, lr_scale=1.0):
    _check_shapes(param, raw_grad)
    param = np.asarray(param, dtype=np.float64)
    g = precondition_grad(raw_grad, precond_cfg)
    if state.weight_decay:
        g = g + state.weight_decay * param
    if state.exp_avg is None:
        state.exp_avg = np.zeros_like(param)
        state.exp_avg_sq = np.zeros_like(param)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.exp_avg = b1 * state.exp_avg + (1 - b1) * g
    state.exp_avg_sq = b2 * state.exp_avg_sq + (1 - b2) * g * g
    m_hat = state.exp_avg / (1 - b1**state.step)
    v_hat = state.exp_avg_sq / (1 - b2**state.step)
    update = m_hat / (np.sqrt(v_hat) + state.eps)
    return param - state.lr * lr_scale * update, state


def lr_schedule(epoch, period=40, factor=10.0):
    """Step decay: ``factor ** -floor(epoch / period)``."""
    if epoch < 0:
        raise InvalidArgument(f"epoch must be >= 0, got {epoch}")
    return factor ** -(epoch // period) if period > 0 else 1.0


@dataclass
class Optimizer:
    """Per-parameter states over a dict of named arrays.

    ``precond`` maps parameter names to a PrecondConfig (or None to skip).
    """

    kind: str = "sgd"
    hyper: dict = field(default_factory=dict)
    precond: dict = field(default_factory=dict)
    states: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise InvalidArgument(f"optimizer must be 'sgd' or 'adam', got {self.kind!r}")
        OptimState(**self.hyper)  # validate early

    def step(self, params, grads, lr_scale=1.0):
        stepper = sgd_step if self.kind == "sgd" else adam_step
        out = {}
        for name, p in params.items():
            state = self.states.get(name)
            if state is None:
                state = self.states[name] = OptimState(**self.hyper)
            new, _ = stepper(p, grads[name], state, self.precond.get(name), lr_scale)
            out[name] = new.astype(p.dtype, copy=False)
        return out

