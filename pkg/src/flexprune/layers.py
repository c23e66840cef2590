"""Layer kinds: forward, hand-written backward, and relevance backward rules.

Each layer exposes
    forward(x)            -> (y, aux)
    backward(x, aux, gy)  -> (gx, {param name: grad})
    relevance(x, aux, ry) -> (rx, extras)
where aux is whatever the forward pass memoized (im2col columns, pooling
argmax indices). Relevance uses the epsilon-stabilized conservation rule
for parametric layers, winner-take-all for max pooling, and plain
pass-through for shape/activation layers.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .tensor import col2im_batch, conv_output_extent, im2col_batch

DEFAULT_EPSILON = 1e-6


def _stabilized(z: np.ndarray, eps: float) -> np.ndarray:
    # sign(0) treated as +1 so the denominator is never exactly zero
    s = np.where(z >= 0.0, 1.0, -1.0)
    return z + eps * s


class Layer:
    params: dict[str, np.ndarray]
    prunable = False

    def __init__(self):
        self.params = {}

    @property
    def kind(self) -> str:
        return type(self).__name__

    def spec(self) -> dict:
        """JSON-serializable constructor arguments (for checkpoints)."""
        return {}

    def output_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError

    def forward(self, x):
        raise NotImplementedError

    def backward(self, x, aux, gy):
        raise NotImplementedError

    def relevance(self, x, aux, ry, eps=DEFAULT_EPSILON):
        raise NotImplementedError


class Dense(Layer):
    prunable = True

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        if rng is None:
            w = np.zeros((out_features, in_features))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / in_features), (out_features, in_features))
        self.params = {"w": w, "b": np.zeros(out_features)}

    def spec(self):
        return {"in_features": self.in_features, "out_features": self.out_features}

    @property
    def units(self) -> int:
        return self.out_features

    def output_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise DimensionError(f"Dense({self.in_features},...) fed shape {in_shape}")
        return (self.out_features,)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(
                f"Dense expects N x {self.in_features}, got {x.shape}"
            )
        return x @ self.params["w"].T + self.params["b"], None

    def backward(self, x, aux, gy):
        gw = gy.T @ x
        gb = gy.sum(axis=0)
        gx = gy @ self.params["w"]
        return gx, {"w": gw, "b": gb}

    def relevance(self, x, aux, ry, eps=DEFAULT_EPSILON):
        w, b = self.params["w"], self.params["b"]
        z = _stabilized(x @ w.T + b, eps)
        rx = x * ((ry / z) @ w)
        return rx, None


class Conv2D(Layer):
    prunable = True

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kh: int,
        kw: int,
        stride: int = 1,
        pad: int = 0,
        rng: np.random.Generator | None = None,
    ):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kh, self.kw = kh, kw
        self.stride, self.pad = stride, pad
        fan_in = in_channels * kh * kw
        if rng is None:
            w = np.zeros((out_channels, in_channels, kh, kw))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (out_channels, in_channels, kh, kw))
        self.params = {"w": w, "b": np.zeros(out_channels)}

    def spec(self):
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kh": self.kh,
            "kw": self.kw,
            "stride": self.stride,
            "pad": self.pad,
        }

    @property
    def units(self) -> int:
        return self.out_channels

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise DimensionError(f"Conv2D expects {self.in_channels} channels, got {c}")
        ho = conv_output_extent(h, self.kh, self.stride, self.pad)
        wo = conv_output_extent(w, self.kw, self.stride, self.pad)
        return (self.out_channels, ho, wo)

    def _w2(self) -> np.ndarray:
        return self.params["w"].reshape(self.out_channels, -1)

    @staticmethod
    def _flat(cols: np.ndarray) -> np.ndarray:
        # N x F x P -> F x N*P, the layout a single gemm wants
        return cols.transpose(1, 0, 2).reshape(cols.shape[1], -1)

    def forward(self, x):
        n = x.shape[0]
        _, ho, wo = self.output_shape(x.shape[1:])
        cols = im2col_batch(x, (self.kh, self.kw), self.stride, self.pad)
        out = self._w2() @ self._flat(cols)  # out_ch x N*P
        out = out.reshape(self.out_channels, n, ho * wo).transpose(1, 0, 2)
        out = out + self.params["b"][None, :, None]
        return out.reshape(n, self.out_channels, ho, wo), cols

    def backward(self, x, cols, gy):
        n = x.shape[0]
        g2 = gy.reshape(n, self.out_channels, -1)
        gflat = self._flat(g2)
        gw = (gflat @ self._flat(cols).T).reshape(self.params["w"].shape)
        gb = g2.sum(axis=(0, 2))
        gcols = (self._w2().T @ gflat).reshape(-1, n, g2.shape[2]).transpose(1, 0, 2)
        gx = col2im_batch(gcols, x.shape[1:], (self.kh, self.kw), self.stride, self.pad)
        return gx, {"w": gw, "b": gb}

    def relevance(self, x, cols, ry, eps=DEFAULT_EPSILON):
        n = x.shape[0]
        w2 = self._w2()
        z = np.matmul(w2, cols) + self.params["b"][:, None]
        s = ry.reshape(n, self.out_channels, -1) / _stabilized(z, eps)
        rel_cols = cols * np.matmul(w2.T, s)
        rx = col2im_batch(rel_cols, x.shape[1:], (self.kh, self.kw), self.stride, self.pad)
        return rx, rel_cols


class ReLU(Layer):
    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        return np.maximum(x, 0.0), None

    def backward(self, x, aux, gy):
        return gy * (x > 0), {}

    def relevance(self, x, aux, ry, eps=DEFAULT_EPSILON):
        return ry, None


class MaxPool2D(Layer):
    def __init__(self, k: int, stride: int | None = None):
        super().__init__()
        self.k = k
        self.stride = k if stride is None else stride

    def spec(self):
        return {"k": self.k, "stride": self.stride}

    def output_shape(self, in_shape):
        c, h, w = in_shape
        ho = conv_output_extent(h, self.k, self.stride, 0)
        wo = conv_output_extent(w, self.k, self.stride, 0)
        return (c, ho, wo)

    def _windows(self, x):
        """(N*C) x k*k x P window matrix; windows flattened row-major so
        argmax resolves ties to the lowest linear index in the window."""
        n, c, h, w = x.shape
        if self.stride == self.k and h % self.k == 0 and w % self.k == 0:
            ho, wo = h // self.k, w // self.k
            v = x.reshape(n * c, ho, self.k, wo, self.k).transpose(0, 2, 4, 1, 3)
            return v.reshape(n * c, self.k * self.k, ho * wo)
        return im2col_batch(x.reshape(n * c, 1, h, w), (self.k, self.k), self.stride, 0)

    def forward(self, x):
        n, c, h, w = x.shape
        _, ho, wo = self.output_shape(x.shape[1:])
        cols = self._windows(x)
        idx = cols.argmax(axis=1)  # first max wins on ties
        out = np.take_along_axis(cols, idx[:, None, :], axis=1)[:, 0, :]
        return out.reshape(n, c, ho, wo), idx

    def _scatter(self, x_shape, idx, values):
        n, c, h, w = x_shape
        nc, p = idx.shape
        cols = np.zeros((nc, self.k * self.k, p))
        np.put_along_axis(cols, idx[:, None, :], values.reshape(nc, 1, p), axis=1)
        if self.stride == self.k and h % self.k == 0 and w % self.k == 0:
            ho, wo = h // self.k, w // self.k
            v = cols.reshape(nc, self.k, self.k, ho, wo).transpose(0, 3, 1, 4, 2)
            return v.reshape(n, c, h, w)
        out = col2im_batch(cols, (1, h, w), (self.k, self.k), self.stride, 0)
        return out.reshape(n, c, h, w)

    def backward(self, x, idx, gy):
        return self._scatter(x.shape, idx, gy), {}

    def relevance(self, x, idx, ry, eps=DEFAULT_EPSILON):
        return self._scatter(x.shape, idx, ry), None


class Flatten(Layer):
    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, x, shape, gy):
        return gy.reshape(shape), {}

    def relevance(self, x, shape, ry, eps=DEFAULT_EPSILON):
        return ry.reshape(shape), None


class SoftmaxCrossEntropyHead(Layer):
    """Identity on logits; owns the fused softmax + cross-entropy loss."""

    def __init__(self, classes: int):
        super().__init__()
        self.classes = classes

    def spec(self):
        return {"classes": self.classes}

    def output_shape(self, in_shape):
        if in_shape != (self.classes,):
            raise DimensionError(f"head expects {self.classes} logits, got {in_shape}")
        return in_shape

    def forward(self, x):
        return x, None

    def backward(self, x, aux, gy):
        return gy, {}

    def relevance(self, x, aux, ry, eps=DEFAULT_EPSILON):
        return ry, None

    def softmax(self, logits):
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def loss(self, logits, labels):
        shifted = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        n = logits.shape[0]
        return float(np.mean(lse - shifted[np.arange(n), labels]))

    def loss_grad(self, logits, labels):
        n = logits.shape[0]
        g = self.softmax(logits)
        g[np.arange(n), labels] -= 1.0
        return g / n


LAYER_KINDS = {
    cls.__name__: cls
    for cls in (Dense, Conv2D, ReLU, MaxPool2D, Flatten, SoftmaxCrossEntropyHead)
}
