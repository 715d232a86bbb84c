import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cdg import tensor
from cdg.errors import InvalidArgument

dims4 = st.tuples(*[st.integers(1, 5)] * 4)
finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_channel_mean_two_slices():
    f = np.array([1.0, 3.0]).reshape(2, 1, 1, 1)
    np.testing.assert_array_equal(tensor.channel_mean(f).ravel(), [2.0, 2.0])


def test_channel_mean_constant():
    f = np.full((4, 2, 3, 3), -1.25)
    np.testing.assert_array_equal(tensor.channel_mean(f), f)


def test_channel_mean_residual_is_zero_mean(rng):
    f = rng.standard_normal((8, 3, 2, 2))
    resid = f - tensor.channel_mean(f)
    assert np.abs(resid.sum(axis=0) / 8).max() <= 1e-12


def test_channel_mean_rejects_zero_dim():
    with pytest.raises(InvalidArgument):
        tensor.channel_mean(np.zeros((0, 1, 1, 1)))


def test_rank_checked():
    with pytest.raises(InvalidArgument):
        tensor.as_tensor4(np.zeros((2, 2)))


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_channel_mean_projection(draw):
    shape = draw.draw(dims4)
    a = draw.draw(arrays(np.float64, shape, elements=finite))
    b = draw.draw(arrays(np.float64, shape, elements=finite))
    al, be = draw.draw(finite), draw.draw(finite)
    m = tensor.channel_mean
    scale = 1.0 + np.abs(al * a).max() + np.abs(be * b).max()
    assert np.abs(m(al * a + be * b) - (al * m(a) + be * m(b))).max() <= 1e-12 * scale
    assert np.abs(m(m(a)) - m(a)).max() <= 1e-12 * (1.0 + np.abs(a).max())
    ortho = np.sum(m(a) * (a - m(a)))
    assert abs(ortho) <= 1e-10 * (1.0 + np.sum(a * a))


def test_transpose_identity_bitwise(rng):
    f = rng.standard_normal((2, 3, 4, 5))
    assert tensor.transpose_axes(f, (0, 1, 2, 3)).tobytes() == f.tobytes()


def test_transpose_involution_and_shape(rng):
    f = rng.standard_normal((2, 3, 1, 1))
    t = tensor.transpose_axes(f, (1, 0, 2, 3))
    assert t.shape == (3, 2, 1, 1)
    assert t[2, 1, 0, 0] == f[1, 2, 0, 0]
    np.testing.assert_array_equal(tensor.transpose_axes(t, (1, 0, 2, 3)), f)


def test_transpose_inverse(rng):
    f = rng.standard_normal((2, 3, 4, 5))
    perm = (2, 0, 3, 1)
    back = tensor.transpose_axes(tensor.transpose_axes(f, perm), tensor.inverse_perm(perm))
    np.testing.assert_array_equal(back, f)


@pytest.mark.parametrize("perm", [(0, 0, 1, 2), (0, 1, 2), (0, 1, 2, 4)])
def test_transpose_rejects_non_permutation(perm):
    with pytest.raises(InvalidArgument):
        tensor.transpose_axes(np.zeros((1, 1, 1, 1)), perm)


def test_rasterize_row_major():
    f = np.array([1.0, 2.0, 3.0, 4.0]).reshape(2, 2, 1, 1)
    r = tensor.rasterize(f)
    assert r.shape == (4, 1, 1, 1)
    np.testing.assert_array_equal(r.ravel(), [1.0, 2.0, 3.0, 4.0])


def test_rasterize_round_trip(rng):
    f = rng.standard_normal((3, 4, 2, 5))
    back = tensor.derasterize(tensor.rasterize(f), f.shape)
    assert back.tobytes() == f.tobytes()
    one = np.full((1, 1, 1, 1), 7.0)
    np.testing.assert_array_equal(tensor.rasterize(one), one)


def test_derasterize_count_mismatch():
    with pytest.raises(InvalidArgument):
        tensor.derasterize(np.zeros(5), (2, 2, 1, 1))


def test_layer_tensor_views():
    assert tensor.as_layer_tensor(np.zeros((10, 1600))).shape == (10, 1600, 1, 1)
    assert tensor.as_layer_tensor(np.zeros(7)).shape == (7, 1, 1, 1)
    with pytest.raises(InvalidArgument):
        tensor.as_layer_tensor(np.zeros((1, 2, 3)))


def test_cdg1_round_trip(tmp_path, rng):
    f = rng.standard_normal((3, 2, 5, 5))
    path = tmp_path / "w.cdg"
    tensor.save(path, f)
    g = tensor.load(path)
    assert g.shape == f.shape and g.tobytes() == f.tobytes()


def test_cdg1_layout():
    f = np.arange(6, dtype=np.float64).reshape(1, 2, 3, 1)
    buf = tensor.dumps(f)
    assert buf[:4] == b"CDG1"
    assert int.from_bytes(buf[4:8], "little") == 4
    assert [int.from_bytes(buf[8 + 4 * i:12 + 4 * i], "little") for i in range(4)] == [1, 2, 3, 1]
    np.testing.assert_array_equal(np.frombuffer(buf[24:], "<f8"), np.arange(6.0))


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:-8],
    lambda b: b[:10],
    lambda b: b[:4] + (3).to_bytes(4, "little") + b[8:],
])
def test_cdg1_rejects_corrupt(mutate):
    buf = tensor.dumps(np.ones((2, 1, 1, 1)))
    with pytest.raises(InvalidArgument):
        tensor.loads(mutate(buf))
