"""Rank-4 parameter tensors (O, I, H, W) and the channel-axis helpers.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 and ndim 4,
laid out row-major with the output-channel axis O outermost.  The CDG1
binary format mirrors that layout byte for byte.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from cdg.errors import InvalidArgument

MAGIC = b"CDG1"
_HEADER = struct.Struct("<4sI4I")


def as_tensor4(x, name="tensor"):
    """Return `x` as a contiguous float64 array of rank 4."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise InvalidArgument(f"{name} must have rank 4, got shape {arr.shape}")
    if 0 in arr.shape:
        raise InvalidArgument(f"{name} has a zero dimension: {arr.shape}")
    return arr


def channel_mean(f):
    """Mean over the output-channel axis, broadcast back to the input shape."""
    f = as_tensor4(f)
    mean = f.mean(axis=0, keepdims=True)
    return np.broadcast_to(mean, f.shape).copy()


def transpose_axes(f, perm):
    f = as_tensor4(f)
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != [0, 1, 2, 3]:
        raise InvalidArgument(f"not a permutation of (0, 1, 2, 3): {perm}")
    return np.ascontiguousarray(f.transpose(perm))


def inverse_perm(perm):
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    return tuple(inv)


def rasterize(f):
    """Flatten row-major into a tensor of dims (N, 1, 1, 1)."""
    f = as_tensor4(f)
    return f.reshape(-1, 1, 1, 1).copy()


def derasterize(v, dims):
    v = np.asarray(v, dtype=np.float64)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4:
        raise InvalidArgument(f"dims must have four entries, got {dims}")
    if v.size != int(np.prod(dims)):
        raise InvalidArgument(
            f"cannot reshape {v.size} elements into dims {dims}"
        )
    return v.reshape(dims).copy()


def as_layer_tensor(w):
    """View a parameter as (O, I, H, W): dense (O, I) weights become (O, I, 1, 1)."""
    w = np.asarray(w)
    if w.ndim == 4:
        return w
    if w.ndim == 2:
        return w.reshape(w.shape[0], w.shape[1], 1, 1)
    if w.ndim == 1:
        return w.reshape(w.shape[0], 1, 1, 1)
    raise InvalidArgument(f"unsupported parameter rank {w.ndim}")


# ---------------------------------------------------------------------------
# CDG1 serialization
# ---------------------------------------------------------------------------


def dumps(f):
    f = as_tensor4(f)
    header = _HEADER.pack(MAGIC, 4, *f.shape)
    return header + f.astype("<f8").tobytes(order="C")


def loads(buf):
    if len(buf) < _HEADER.size:
        raise InvalidArgument(f"CDG1 data truncated: {len(buf)} bytes")
    magic, ndim, o, i, h, w = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise InvalidArgument(f"bad CDG1 magic {magic!r}")
    if ndim != 4:
        raise InvalidArgument(f"CDG1 ndim must be 4, got {ndim}")
    n = o * i * h * w
    expected = _HEADER.size + 8 * n
    if len(buf) != expected:
        raise InvalidArgument(
            f"CDG1 payload size {len(buf)} does not match dims "
            f"({o}, {i}, {h}, {w}); expected {expected} bytes"
        )
    data = np.frombuffer(buf, dtype="<f8", count=n, offset=_HEADER.size)
    return data.astype(np.float64).reshape(o, i, h, w)


def save(path, f):
    with open(os.fspath(path), "wb") as fh:
        fh.write(dumps(f))


def load(path):
    with open(os.fspath(path), "rb") as fh:
        return loads(fh.read())
