"""Network container: ordered layers, structured channel masks, cut index.

Pruning a unit means masking it: the unit's outgoing parameters (and the
downstream incoming weights reading its channel) are zeroed and frozen.
Tensors never shrink, so index bookkeeping stays stable across the
post-pruning training epochs; the split-learning byte accounting is the
only place where a pruned channel is treated as physically absent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, ConstraintError, DimensionError, InputError
from .layers import Conv2D, Dense, Flatten, Layer, SoftmaxCrossEntropyHead


@dataclass
class LayerTrace:
    x: np.ndarray
    y: np.ndarray
    aux: object


@dataclass
class Trace:
    entries: list[LayerTrace]
    net_revision: int
    net_id: int


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


class Network:
    def __init__(
        self,
        layers: list[Layer],
        input_shape: tuple,
        cut_index: int = 1,
        prunable_indices: list[int] | None = None,
    ):
        if not 1 <= cut_index <= len(layers) - 1:
            raise InputError(f"cut_index {cut_index} outside [1, {len(layers) - 1}]")
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.cut_index = cut_index
        self.epoch = 0
        self.revision = 0

        # boundary_shapes[i] is the input shape of layer i; [-1] the output
        self.boundary_shapes = [self.input_shape]
        for layer in layers:
            self.boundary_shapes.append(layer.output_shape(self.boundary_shapes[-1]))

        parametric = [i for i, l in enumerate(layers) if l.params]
        if prunable_indices is None:
            # the layer producing the logits is never pruned
            prunable_indices = [i for i in parametric[:-1] if layers[i].prunable]
        self.prunable_indices = list(prunable_indices)

        self.masks: dict[int, np.ndarray] = {
            i: np.ones(layers[i].units, dtype=bool) for i in self.prunable_indices
        }
        self.trainable: dict[int, dict[str, np.ndarray]] = {
            i: {name: np.ones_like(p, dtype=bool) for name, p in layers[i].params.items()}
            for i in parametric
        }
        self.opt_state: dict[int, dict[str, AdamState]] = {}

    # ---------------------------------------------------------------- forward

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Trace]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise DimensionError(
                f"batch shape {x.shape[1:]} does not match input shape {self.input_shape}"
            )
        entries = []
        for i, layer in enumerate(self.layers):
            y, aux = layer.forward(x)
            if i in self.masks:
                y = self._mask_channels(i, y)
            entries.append(LayerTrace(x, y, aux))
            x = y
        return x, Trace(entries, self.revision, id(self))

    def _mask_channels(self, i: int, y: np.ndarray) -> np.ndarray:
        m = self.masks[i]
        if y.ndim == 2:
            return y * m[None, :]
        return y * m[None, :, None, None]

    def check_trace(self, trace: Trace):
        if trace.net_id != id(self) or trace.net_revision != self.revision:
            raise ConsistencyError("trace was produced by a different network state")

    # --------------------------------------------------------------- backward

    def backward(self, trace: Trace, labels: np.ndarray) -> dict[int, dict[str, np.ndarray]]:
        """Gradients of the head loss w.r.t. every trainable parameter."""
        self.check_trace(trace)
        head = self.layers[-1]
        if not isinstance(head, SoftmaxCrossEntropyHead):
            raise ConsistencyError("network has no loss head")
        g = head.loss_grad(trace.entries[-1].y, labels)
        grads: dict[int, dict[str, np.ndarray]] = {}
        for i in reversed(range(len(self.layers))):
            entry = trace.entries[i]
            if i in self.masks:
                g = self._mask_channels(i, g)
            g, pgrads = self.layers[i].backward(entry.x, entry.aux, g)
            if pgrads:
                grads[i] = {
                    name: grad * self.trainable[i][name] for name, grad in pgrads.items()
                }
        return grads

    # ---------------------------------------------------------------- masking

    def apply_mask(self, layer_index: int, unit: int) -> None:
        """Prune one output unit: zero+freeze its parameters everywhere."""
        if layer_index not in self.masks:
            raise ConstraintError(f"layer {layer_index} is not prunable")
        mask = self.masks[layer_index]
        if not 0 <= unit < mask.size:
            raise InputError(f"unit {unit} out of range for layer {layer_index}")
        if not mask[unit]:
            raise ConstraintError(f"unit ({layer_index}, {unit}) is already pruned")
        if mask.sum() < 2:
            raise ConstraintError(f"cannot prune the last active unit of layer {layer_index}")

        layer = self.layers[layer_index]
        layer.params["w"][unit] = 0.0
        layer.params["b"][unit] = 0.0
        self.trainable[layer_index]["w"][unit] = False
        self.trainable[layer_index]["b"][unit] = False
        mask[unit] = False
        self._zero_downstream(layer_index, unit)
        self.revision += 1

    def _zero_downstream(self, layer_index: int, unit: int) -> None:
        """Zero+freeze the next parametric layer's weights reading this channel."""
        flat_span: slice | None = None
        for j in range(layer_index + 1, len(self.layers)):
            layer = self.layers[j]
            if isinstance(layer, Flatten):
                c, h, w = self.boundary_shapes[j]
                flat_span = slice(unit * h * w, (unit + 1) * h * w)
            elif isinstance(layer, Conv2D):
                layer.params["w"][:, unit] = 0.0
                self.trainable[j]["w"][:, unit] = False
                return
            elif isinstance(layer, Dense):
                span = flat_span if flat_span is not None else unit
                layer.params["w"][:, span] = 0.0
                self.trainable[j]["w"][:, span] = False
                return

    # ------------------------------------------------------------- accounting

    def unit_param_count(self, layer_index: int) -> int:
        w = self.layers[layer_index].params["w"]
        return int(np.prod(w.shape[1:])) + 1  # row/filter weights + bias

    def total_prunable_params(self) -> int:
        return sum(
            self.masks[i].size * self.unit_param_count(i) for i in self.prunable_indices
        )

    def active_param_count(self) -> int:
        return sum(
            int(self.masks[i].sum()) * self.unit_param_count(i)
            for i in self.prunable_indices
        )

    # ------------------------------------------------------- boundary activity

    def boundary_activity(self, boundary: int) -> np.ndarray:
        """Boolean activity per channel (spatial shapes) or feature (vectors)
        at the boundary between layers boundary-1 and boundary."""
        if not 0 <= boundary <= len(self.layers):
            raise InputError(f"boundary {boundary} out of range")
        shape = self.boundary_shapes[0]
        active = np.ones(shape[0] if len(shape) == 3 else shape[0], dtype=bool)
        for i in range(boundary):
            layer = self.layers[i]
            if isinstance(layer, Flatten):
                c, h, w = self.boundary_shapes[i]
                active = np.repeat(active, h * w)
            elif i in self.masks:
                active = self.masks[i].copy()
            elif layer.params:
                shape_out = self.boundary_shapes[i + 1]
                active = np.ones(shape_out[0], dtype=bool)
        return active

    def active_boundary_elements(self, boundary: int) -> int:
        """Number of non-pruned activation elements per sample at a boundary."""
        shape = self.boundary_shapes[boundary]
        active = self.boundary_activity(boundary)
        if len(shape) == 3:
            return int(active.sum()) * shape[1] * shape[2]
        return int(active.sum())
