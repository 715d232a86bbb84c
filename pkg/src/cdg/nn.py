"""Two-layer CNN for 28x28 digits with hand-derived backpropagation.

conv 5x5 (valid) -> ReLU -> maxpool 2x2 -> conv 5x5 (valid) -> ReLU ->
maxpool 2x2 -> flatten -> dense -> logits.  Every weight tensor has its
output channel on axis 0.
"""

from __future__ import annotations

from collections import namedtuple

import numpy as np

from cdg.errors import InvalidArgument

KERNEL = 5
IMAGE = 28
N_CLASSES = 10

Batch = namedtuple("Batch", ["images", "labels"])

PARAM_NAMES = (
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "dense.weight",
    "dense.bias",
)


def feature_size(c2, image=IMAGE, k=KERNEL):
    side = ((image - k + 1) // 2 - k + 1) // 2
    return c2 * side * side


def param_shapes(c1=50, c2=100):
    return {
        "conv1.weight": (c1, 1, KERNEL, KERNEL),
        "conv1.bias": (c1,),
        "conv2.weight": (c2, c1, KERNEL, KERNEL),
        "conv2.bias": (c2,),
        "dense.weight": (N_CLASSES, feature_size(c2)),
        "dense.bias": (N_CLASSES,),
    }


def init_params(seed, c1=50, c2=100, dtype=np.float64):
    """Uniform fan-in initialization with std 1/sqrt(fan_in); biases start at 0."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(c1, c2).items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[1:]))
        bound = np.sqrt(3.0 / fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def zero_params(c1=50, c2=100):
    return {n: np.zeros(s) for n, s in param_shapes(c1, c2).items()}


def check_batch(params, batch):
    images, labels = batch
    if images.ndim != 4 or images.shape[1:] != (1, IMAGE, IMAGE):
        raise InvalidArgument(f"images must have shape (B, 1, 28, 28), got {images.shape}")
    if images.shape[0] < 1:
        raise InvalidArgument("batch must contain at least one image")
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (images.shape[0],):
            raise InvalidArgument("labels must have one entry per image")
        if labels.min() < 0 or labels.max() >= N_CLASSES:
            raise InvalidArgument("labels must lie in [0, 9]")
    c1 = params["conv1.weight"].shape[0]
    c2 = params["conv2.weight"].shape[0]
    expected = param_shapes(c1, c2)
    for name in PARAM_NAMES:
        if params[name].shape != expected[name]:
            raise InvalidArgument(
                f"{name} has shape {params[name].shape}, expected {expected[name]}"
            )


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


def _im2col(x, k):
    """Channels-last (B, H, W, C) -> (B*Ho*Wo, k*k*C) patch matrix."""
    b, h, w, c = x.shape
    ho, wo = h - k + 1, w - k + 1
    cols = np.empty((b, ho, wo, k, k, c), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = x[:, i:i + ho, j:j + wo, :]
    return cols.reshape(b * ho * wo, k * k * c)


def _weight_matrix(w):
    """(O, C, k, k) -> (O, k*k*C), matching the patch layout."""
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


def conv_forward(x, w, bias):
    """Valid convolution on channels-last input; returns (B, Ho, Wo, O) and the patches."""
    b, h, wd, _ = x.shape
    o, _, k, _ = w.shape
    cols = _im2col(x, k)
    out = cols @ _weight_matrix(w).T
    out += bias
    return out.reshape(b, h - k + 1, wd - k + 1, o), cols


def conv_backward(dout, x_shape, w, cols, need_dx=True):
    b, h, wd, c = x_shape
    o, _, k, _ = w.shape
    dout_r = dout.reshape(-1, o)
    dw = (dout_r.T @ cols).reshape(o, k, k, c).transpose(0, 3, 1, 2)
    db = dout_r.sum(axis=0)
    if not need_dx:
        return None, np.ascontiguousarray(dw), db
    ho, wo = h - k + 1, wd - k + 1
    dcols = (dout_r @ _weight_matrix(w)).reshape(b, ho, wo, k, k, c)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
    return dx, np.ascontiguousarray(dw), db


def maxpool_forward(x):
    """2x2 max-pool, stride 2, channels-last; ties go to the lowest row-major index."""
    b, h, w, c = x.shape
    win = x.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    win = win.reshape(b, h // 2, w // 2, c, 4)
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool_backward(dout, idx):
    b, hh, wh, c = dout.shape
    dwin = np.zeros((b, hh, wh, c, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    dwin = dwin.reshape(b, hh, wh, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return dwin.reshape(b, hh * 2, wh * 2, c)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


def forward(params, batch):
    """Return logits (B, 10) and the activations needed by backprop."""
    check_batch(params, batch)
    x = batch.images.astype(params["conv1.weight"].dtype, copy=False)
    x = x.transpose(0, 2, 3, 1)
    z1, cols1 = conv_forward(x, params["conv1.weight"], params["conv1.bias"])
    a1 = np.maximum(z1, 0)
    p1, idx1 = maxpool_forward(a1)
    z2, cols2 = conv_forward(p1, params["conv2.weight"], params["conv2.bias"])
    a2 = np.maximum(z2, 0)
    p2, idx2 = maxpool_forward(a2)
    # flatten in (C, H, W) order so dense.weight columns follow the NCHW convention
    flat = p2.transpose(0, 3, 1, 2).reshape(p2.shape[0], -1)
    logits = flat @ params["dense.weight"].T + params["dense.bias"]
    cache = dict(x=x, z1=z1, cols1=cols1, idx1=idx1, p1=p1,
                 z2=z2, cols2=cols2, idx2=idx2, p2=p2, flat=flat)
    return logits, cache


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels):
    logp = log_softmax(logits)
    return float(-logp[np.arange(len(labels)), labels].mean())


def loss_and_grads(params, batch):
    """Mean softmax cross-entropy and its gradient for every parameter."""
    logits, c = forward(params, batch)
    labels = np.asarray(batch.labels)
    n = len(labels)
    logp = log_softmax(logits)
    loss = float(-logp[np.arange(n), labels].mean())

    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    grads = {
        "dense.weight": dlogits.T @ c["flat"],
        "dense.bias": dlogits.sum(axis=0),
    }
    b, hh, wh, ch = c["p2"].shape
    dp2 = (dlogits @ params["dense.weight"]).reshape(b, ch, hh, wh).transpose(0, 2, 3, 1)
    dz2 = maxpool_backward(dp2, c["idx2"]) * (c["z2"] > 0)
    dp1, grads["conv2.weight"], grads["conv2.bias"] = conv_backward(
        dz2, c["p1"].shape, params["conv2.weight"], c["cols2"]
    )
    dz1 = maxpool_backward(dp1, c["idx1"]) * (c["z1"] > 0)
    _, grads["conv1.weight"], grads["conv1.bias"] = conv_backward(
        dz1, c["x"].shape, params["conv1.weight"], c["cols1"], need_dx=False
    )
    return loss, grads


def loss(params, batch):
    logits, _ = forward(params, batch)
    return cross_entropy(logits, np.asarray(batch.labels))


def predict(params, images, chunk=500):
    out = []
    for s in range(0, len(images), chunk):
        logits, _ = forward(params, Batch(images[s:s + chunk], None))
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def accuracy(params, images, labels, chunk=500):
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(predict(params, images, chunk) == np.asarray(labels)))


def activation_pattern(params, batch):
    """ReLU masks and pool winners; the loss is smooth while these stay fixed."""
    _, c = forward(params, batch)
    return (c["z1"] > 0, c["idx1"], c["z2"] > 0, c["idx2"])


def same_pattern(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))
