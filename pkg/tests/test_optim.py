import numpy as np
import pytest

from cdg import data
from cdg import precondition as pc
from cdg.errors import InvalidArgument
from cdg.optim import OptimState, Optimizer, adam_step, lr_schedule, precondition_grad, sgd_step
from cdg.precondition import PrecondConfig


def scalar(v):
    return np.full((1, 1, 1, 1), float(v))


def test_plain_euler_step():
    p, _ = sgd_step(scalar(1.0), scalar(2.0), OptimState(lr=0.1, momentum=0, weight_decay=0))
    assert p.item() == pytest.approx(0.8, abs=1e-15)


def test_momentum_recursion():
    st = OptimState(lr=1.0, momentum=0.9, weight_decay=0)
    p, st = sgd_step(scalar(0), scalar(1), st)
    assert st.buf.item() == 1.0 and p.item() == -1.0
    p, st = sgd_step(p, scalar(1), st)
    assert st.buf.item() == pytest.approx(1.9) and p.item() == pytest.approx(-2.9)


def test_weight_decay_added_after_preconditioning():
    p0 = np.arange(4.0).reshape(4, 1, 1, 1)
    g = np.array([1.0, -1.0, 2.0, 0.0]).reshape(4, 1, 1, 1)
    cfg = PrecondConfig(metric="reweighted_h0_code_variant", lam=1.0)
    st = OptimState(lr=0.5, momentum=0, weight_decay=0.1)
    p, _ = sgd_step(p0, g, st, cfg)
    expect = p0 - 0.5 * (pc.reweighted_h0_code_variant(g, 1.0) + 0.1 * p0)
    np.testing.assert_allclose(p, expect, rtol=1e-15)


def test_reweighted_lambda_one_matches_identity(rng):
    p0 = rng.standard_normal((5, 3, 2, 2))
    grads = [rng.standard_normal(p0.shape) for _ in range(4)]
    out = []
    for cfg in (None, PrecondConfig(metric="reweighted_h0", lam=1.0)):
        p, st = p0.copy(), OptimState()
        for g in grads:
            p, st = sgd_step(p, g, st, cfg)
        out.append(p)
    np.testing.assert_array_equal(out[0], out[1])


def test_adam_first_step():
    p, st = adam_step(scalar(0), scalar(2), OptimState(lr=0.1, weight_decay=0))
    assert st.exp_avg.item() == pytest.approx(0.2)
    assert p.item() == pytest.approx(-0.1, rel=1e-7)


def test_adam_zero_grad():
    p = scalar(3.0)
    st = OptimState(lr=0.1, weight_decay=0)
    for _ in range(5):
        p, st = adam_step(p, scalar(0), st)
    assert p.item() == 3.0


def test_adam_first_step_bounded(rng):
    for g in rng.standard_normal(100) * 10 ** rng.uniform(-6, 6, 100):
        p, _ = adam_step(scalar(0), scalar(g), OptimState(lr=0.01, weight_decay=0))
        assert abs(p.item()) <= 0.01 * (1 + 1e-6)


@pytest.mark.parametrize("step", [sgd_step, adam_step])
def test_shape_mismatch(step):
    with pytest.raises(InvalidArgument):
        step(np.zeros((2, 1, 1, 1)), np.zeros((3, 1, 1, 1)), OptimState())


@pytest.mark.parametrize("kw", [dict(lr=0), dict(momentum=1.0), dict(weight_decay=-1),
                                dict(beta1=1.0), dict(beta2=-0.1), dict(eps=0)])
def test_state_validation(kw):
    with pytest.raises(InvalidArgument):
        OptimState(**kw)


def test_lr_schedule():
    assert lr_schedule(0) == 1.0
    assert lr_schedule(39) == 1.0
    assert lr_schedule(40, 40) == pytest.approx(0.1)
    assert lr_schedule(85, 40) == pytest.approx(0.01)
    with pytest.raises(InvalidArgument):
        lr_schedule(-1)


def test_precondition_grad_dense_rank(rng):
    g = rng.standard_normal((10, 7))
    cfg = PrecondConfig(metric="sobolev_tilde_h1", lam=1.0, beta=0.0)
    out = precondition_grad(g, cfg)
    assert out.shape == g.shape
    np.testing.assert_array_equal(out, pc.sobolev_tilde_h1(g.reshape(10, 7, 1, 1), 1.0).reshape(10, 7))


@pytest.mark.parametrize("metric", pc.METRICS)
@pytest.mark.parametrize("lam", [0.5, 1.0, 5.0])
def test_quadratic_contracts_monotonically(metric, lam):
    task = data.synthetic_quadratic((8, 4, 2, 2), 3)
    cfg = PrecondConfig(metric=metric, lam=lam)
    st = OptimState(lr=0.5 / pc.operator_norm_bound(cfg), momentum=0, weight_decay=0)
    x = np.zeros(task.dims)
    dist = np.linalg.norm(x - task.target)
    for _ in range(10000):
        x, st = sgd_step(x, task.grad(x), st, cfg)
        new = np.linalg.norm(x - task.target)
        assert new <= dist * (1 + 1e-12)
        dist = new
        if dist < 1e-7:
            break
    assert dist < 1e-6


def test_optimizer_keeps_dtype_and_is_deterministic(rng):
    params = {"w": rng.standard_normal((4, 2, 1, 1)).astype(np.float32), "b": np.zeros(4, np.float32)}
    grads = {k: np.ones_like(v) for k, v in params.items()}
    runs = []
    for _ in range(2):
        opt = Optimizer("sgd", {"lr": 0.1}, {"w": PrecondConfig(metric="sobolev_h1")})
        p = dict(params)
        for _ in range(3):
            p = opt.step(p, grads)
        runs.append(p)
    assert runs[0]["w"].dtype == np.float32
    assert all(runs[0][k].tobytes() == runs[1][k].tobytes() for k in params)
    with pytest.raises(InvalidArgument):
        Optimizer("rmsprop")
