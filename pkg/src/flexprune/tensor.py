"""Dense float64 tensor primitives: matmul, im2col/col2im, finiteness checks.

All arrays are C-contiguous numpy float64. im2col is the single
convolution path in the package: convolving a filter bank with the column
matrix via matmul is, by construction, identical to direct convolution,
which is what the relevance lifting for conv layers relies on.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, GeometryError, TrainingError


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise TrainingError(f"non-finite values in {what}")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plain 2-D matrix product with an explicit shape check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def conv_output_extent(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise GeometryError(
            f"window {k} with stride {stride}, pad {pad} does not tile extent {size}"
        )
    return span // stride + 1


def im2col(x: np.ndarray, kernel: tuple[int, int], stride: int = 1, pad: int = 0) -> np.ndarray:
    """Unroll a C x H x W tensor into a (C*kh*kw) x (Ho*Wo) column matrix.

    Column j holds the receptive field of output position j, flattened
    channel-major, so `filters.reshape(K, -1) @ im2col(x, ...)` equals the
    direct convolution of x with the filter bank.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise DimensionError(f"im2col expects C x H x W input, got shape {x.shape}")
    cols = im2col_batch(x[None], kernel, stride, pad)
    return cols[0]


def im2col_batch(x: np.ndarray, kernel: tuple[int, int], stride: int = 1, pad: int = 0) -> np.ndarray:
    """Batched im2col: N x C x H x W -> N x (C*kh*kw) x (Ho*Wo)."""
    n, c, h, w = x.shape
    kh, kw = kernel
    ho = conv_output_extent(h, kh, stride, pad)
    wo = conv_output_extent(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=np.float64)
    for ky in range(kh):
        y_end = ky + stride * ho
        for kx in range(kw):
            x_end = kx + stride * wo
            cols[:, :, ky, kx] = x[:, :, ky:y_end:stride, kx:x_end:stride]
    return np.ascontiguousarray(cols.reshape(n, c * kh * kw, ho * wo))


def col2im_batch(
    cols: np.ndarray,
    input_shape: tuple[int, int, int],
    kernel: tuple[int, int],
    stride: int = 1,
    pad: int = 0,
) -> np.ndarray:
    """Scatter-add the adjoint of im2col_batch back onto N x C x H x W."""
    c, h, w = input_shape
    kh, kw = kernel
    n = cols.shape[0]
    ho = conv_output_extent(h, kh, stride, pad)
    wo = conv_output_extent(w, kw, stride, pad)
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for ky in range(kh):
        y_end = ky + stride * ho
        for kx in range(kw):
            x_end = kx + stride * wo
            out[:, :, ky:y_end:stride, kx:x_end:stride] += cols[:, :, ky, kx]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)
