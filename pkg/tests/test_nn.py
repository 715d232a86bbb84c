import numpy as np
import pytest
from scipy.signal import correlate

from cdg import nn, verify
from cdg.errors import InvalidArgument


def reference_logits(params, images):
    """Straightforward NCHW forward pass: scipy correlation and loop pooling."""
    def conv(x, w, b):
        out = np.stack([
            np.stack([sum(correlate(x[n, c], w[o, c], mode="valid") for c in range(x.shape[1])) + b[o]
                      for o in range(w.shape[0])])
            for n in range(x.shape[0])
        ])
        return np.maximum(out, 0)

    def pool(x):
        n, c, h, w = x.shape
        out = np.empty((n, c, h // 2, w // 2))
        for i in range(h // 2):
            for j in range(w // 2):
                out[:, :, i, j] = x[:, :, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max(axis=(2, 3))
        return out

    h = pool(conv(images, params["conv1.weight"], params["conv1.bias"]))
    h = pool(conv(h, params["conv2.weight"], params["conv2.bias"]))
    return h.reshape(len(images), -1) @ params["dense.weight"].T + params["dense.bias"]


@pytest.fixture
def small(rng):
    params = nn.init_params(3, c1=4, c2=6)
    for k in params:
        if k.endswith("bias"):
            params[k] = rng.uniform(-0.1, 0.1, params[k].shape)
    images = rng.uniform(0, 1, (3, 1, 28, 28))
    return params, nn.Batch(images, np.array([1, 7, 3]))


def test_shapes():
    s = nn.param_shapes()
    assert s["conv2.weight"] == (100, 50, 5, 5)
    assert s["dense.weight"] == (10, 1600)
    assert nn.feature_size(100) == 1600


def test_forward_matches_reference(small):
    params, batch = small
    logits, _ = nn.forward(params, batch)
    assert logits.shape == (3, 10)
    np.testing.assert_allclose(logits, reference_logits(params, batch.images), rtol=1e-10, atol=1e-12)


def test_zero_params_uniform_softmax():
    params = nn.zero_params()
    batch = nn.Batch(np.random.default_rng(0).uniform(0, 1, (2, 1, 28, 28)), np.array([0, 4]))
    logits, _ = nn.forward(params, batch)
    np.testing.assert_array_equal(logits, 0.0)
    loss, grads = nn.loss_and_grads(params, batch)
    assert loss == pytest.approx(np.log(10), abs=1e-12)
    onehot = np.zeros((2, 10))
    onehot[[0, 1], [0, 4]] = 1
    np.testing.assert_allclose(grads["dense.bias"], (0.1 - onehot).mean(axis=0), atol=1e-15)


def test_batch_independence(small):
    params, batch = small
    one, _ = nn.forward(params, nn.Batch(batch.images[:1], None))
    two, _ = nn.forward(params, nn.Batch(np.concatenate([batch.images[:1]] * 2), None))
    # BLAS blocking depends on the batch size, so agreement is to rounding only
    np.testing.assert_allclose(two[0], one[0], rtol=1e-12, atol=1e-14)
    np.testing.assert_array_equal(two[0], two[1])


def test_duplicated_batch_same_loss_and_grads(small):
    params, batch = small
    l1, g1 = nn.loss_and_grads(params, batch)
    dup = nn.Batch(np.concatenate([batch.images] * 2), np.concatenate([batch.labels] * 2))
    l2, g2 = nn.loss_and_grads(params, dup)
    assert l2 == pytest.approx(l1, rel=1e-12)
    for k in g1:
        np.testing.assert_allclose(g2[k], g1[k], rtol=1e-10, atol=1e-15)


def test_init_deterministic_and_scaled():
    a, b, c = nn.init_params(1), nn.init_params(1), nn.init_params(2)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert a["conv1.weight"].tobytes() != c["conv1.weight"].tobytes()
    std = a["conv1.weight"].std()
    assert abs(std * np.sqrt(25) - 1) <= 0.2
    assert abs(a["conv2.weight"].std() * np.sqrt(50 * 25) - 1) <= 0.2


def test_maxpool_ties_go_to_first():
    x = np.zeros((1, 2, 2, 1))
    out, idx = nn.maxpool_forward(x)
    assert idx.item() == 0
    d = nn.maxpool_backward(np.ones_like(out), idx)
    assert d[0, 0, 0, 0] == 1.0 and d.sum() == 1.0


def test_gradient_check_small(small):
    params, batch = small
    res = verify.gradient_check(params, batch, np.random.default_rng(5), n_coords=40)
    for name, (err, n, _) in res.items():
        assert n == 40 and err <= 1e-5, name


def test_loss_decreases_under_sgd():
    rng = np.random.default_rng(0)
    params = nn.init_params(0, c1=8, c2=12)
    batch = nn.Batch(rng.uniform(0, 1, (16, 1, 28, 28)), rng.integers(0, 10, 16))
    first = nn.loss(params, batch)
    for _ in range(50):
        _, g = nn.loss_and_grads(params, batch)
        params = {k: params[k] - 0.01 * g[k] for k in params}
    assert nn.loss(params, batch) < first


def test_predict_and_accuracy(small):
    params, batch = small
    logits, _ = nn.forward(params, batch)
    np.testing.assert_array_equal(nn.predict(params, batch.images, chunk=2), logits.argmax(axis=1))
    assert nn.accuracy(params, batch.images, logits.argmax(axis=1)) == 1.0
    assert np.isnan(nn.accuracy(params, batch.images[:0], np.zeros(0, int)))


@pytest.mark.parametrize("images,labels", [
    (np.zeros((2, 28, 28)), np.zeros(2, int)),
    (np.zeros((2, 1, 27, 28)), np.zeros(2, int)),
    (np.zeros((2, 1, 28, 28)), np.zeros(3, int)),
    (np.zeros((2, 1, 28, 28)), np.array([0, 10])),
])
def test_bad_batches(images, labels):
    with pytest.raises(InvalidArgument):
        nn.forward(nn.zero_params(4, 6), nn.Batch(images, labels))


def test_param_shape_mismatch():
    p = nn.zero_params(4, 6)
    p["dense.weight"] = np.zeros((10, 5))
    with pytest.raises(InvalidArgument):
        nn.forward(p, nn.Batch(np.zeros((1, 1, 28, 28)), None))
