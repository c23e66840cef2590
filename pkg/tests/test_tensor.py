import numpy as np
import pytest

from flexprune.errors import DimensionError, GeometryError, TrainingError
from flexprune.tensor import (
    as_tensor,
    check_finite,
    col2im_batch,
    conv_output_extent,
    im2col,
    im2col_batch,
    matmul,
)


def direct_conv(x, w, b, stride=1, pad=0):
    """Nested-loop convolution, the oracle im2col must agree with."""
    c, h, ww = x.shape
    k, _, kh, kw = w.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (ww + 2 * pad - kw) // stride + 1
    out = np.zeros((k, ho, wo))
    for f in range(k):
        for i in range(ho):
            for j in range(wo):
                patch = x[:, i * stride : i * stride + kh, j * stride : j * stride + kw]
                out[f, i, j] = np.sum(patch * w[f]) + b[f]
    return out


def test_as_tensor_is_float64_contiguous():
    t = as_tensor([[1, 2], [3, 4]])
    assert t.dtype == np.float64
    assert t.flags["C_CONTIGUOUS"]


def test_check_finite_raises():
    with pytest.raises(TrainingError):
        check_finite(np.array([1.0, np.nan]))
    with pytest.raises(TrainingError):
        check_finite(np.array([np.inf]))
    check_finite(np.zeros(3))


def test_matmul_small_example():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0], [6.0]])
    assert np.array_equal(matmul(a, b), np.array([[17.0], [39.0]]))


def test_matmul_shape_errors():
    with pytest.raises(DimensionError):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(DimensionError):
        matmul(np.zeros(3), np.zeros((3, 2)))


def test_conv_output_extent():
    assert conv_output_extent(16, 3, 1, 1) == 16
    assert conv_output_extent(16, 2, 2, 0) == 8
    assert conv_output_extent(5, 3, 1, 0) == 3
    with pytest.raises(GeometryError):
        conv_output_extent(5, 2, 2, 0)
    with pytest.raises(GeometryError):
        conv_output_extent(2, 3, 1, 0)


def test_im2col_hand_enumerated():
    # 1 channel, 3x3 input, 2x2 kernel, stride 1: four columns
    x = np.arange(9, dtype=np.float64).reshape(1, 3, 3)
    cols = im2col(x, (2, 2))
    expected = np.array(
        [
            [0, 1, 3, 4],
            [1, 2, 4, 5],
            [3, 4, 6, 7],
            [4, 5, 7, 8],
        ],
        dtype=np.float64,
    )
    assert np.array_equal(cols, expected)


def test_im2col_channel_major_order():
    # second channel's rows come after all of the first channel's rows
    x = np.stack([np.zeros((2, 2)), np.ones((2, 2))])
    cols = im2col(x, (2, 2))
    assert cols.shape == (8, 1)
    assert np.array_equal(cols[:, 0], np.array([0, 0, 0, 0, 1, 1, 1, 1.0]))


def test_im2col_rejects_bad_rank():
    with pytest.raises(DimensionError):
        im2col(np.zeros((3, 3)), (2, 2))


def test_im2col_matmul_equals_direct_conv():
    rng = np.random.default_rng(7)
    for _ in range(50):
        c = int(rng.integers(1, 4))
        k = int(rng.integers(1, 5))
        kh = int(rng.integers(1, 4))
        kw = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        h = kh + stride * int(rng.integers(1, 5)) - 2 * pad
        w = kw + stride * int(rng.integers(1, 5)) - 2 * pad
        if h <= 0 or w <= 0:
            continue
        x = rng.normal(size=(c, h, w))
        weight = rng.normal(size=(k, c, kh, kw))
        b = rng.normal(size=k)
        cols = im2col(x, (kh, kw), stride, pad)
        got = (weight.reshape(k, -1) @ cols) + b[:, None]
        want = direct_conv(x, weight, b, stride, pad)
        assert np.allclose(got.reshape(want.shape), want, atol=1e-9)


def test_col2im_is_adjoint_of_im2col():
    # <im2col(x), y> == <x, col2im(y)> for random x, y
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = rng.normal(size=(2, 3, 6, 6))
        cols = im2col_batch(x, (3, 3), stride=1, pad=1)
        y = rng.normal(size=cols.shape)
        back = col2im_batch(y, (3, 6, 6), (3, 3), stride=1, pad=1)
        assert np.isclose(np.sum(cols * y), np.sum(x * back))


def test_col2im_counts_overlaps():
    # all-ones columns scatter back to per-pixel receptive-field counts
    x = np.ones((1, 1, 3, 3))
    cols = im2col_batch(x, (2, 2))
    back = col2im_batch(np.ones_like(cols), (1, 3, 3), (2, 2))
    expected = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64)
    assert np.array_equal(back[0, 0], expected)
