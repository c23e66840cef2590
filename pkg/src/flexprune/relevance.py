"""Relevance propagation and the lifting of element relevance onto parameters.

The backward relevance pass seeds the selected-class logit, applies the
epsilon-stabilized conservation rule through Dense and Conv2D layers (the
conv case runs on the same im2col column matrix the forward pass used, so
it is literally the fully-connected rule on the unrolled form),
winner-take-all through max pooling, and pass-through elsewhere.

Parameter relevance then sums, over scoring samples, the relevance of the
input and output elements each weight connects:

    rel(w[j, k]) = sum_samples( rel_in[k] + rel_out[j] )

and, for convolutions, additionally over every output position that shares
the weight.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, InputError
from .layers import DEFAULT_EPSILON, Conv2D, Dense
from .network import Network, Trace


@dataclass
class RelevanceRecord:
    """Per-layer boundary relevances for one scoring batch.

    rel_in[i] / rel_out[i]: relevance of layer i's input / output, per
    sample. rel_cols[i]: for conv layers, relevance of the im2col column
    matrix (N x C*kh*kw x positions), the unrolled-FC view of the input.
    """

    rel_in: list[np.ndarray]
    rel_out: list[np.ndarray]
    rel_cols: dict[int, np.ndarray]
    seed: np.ndarray

    @property
    def input_relevance(self) -> np.ndarray:
        return self.rel_in[0]


def seed_output_relevance(logits: np.ndarray, labels: np.ndarray | None = None) -> np.ndarray:
    """Relevance seed: the selected-class logit at its index, zero elsewhere.

    The selected class is argmax(logits) (ties: lowest index) unless
    ground-truth labels are given.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n, classes = logits.shape
    if labels is None:
        chosen = logits.argmax(axis=1)
    else:
        chosen = np.asarray(labels)
        if chosen.min() < 0 or chosen.max() >= classes:
            raise InputError(f"label outside [0, {classes})")
    seed = np.zeros_like(logits)
    seed[np.arange(n), chosen] = logits[np.arange(n), chosen]
    return seed


def propagate_relevance(
    net: Network, trace: Trace, seed: np.ndarray, eps: float = DEFAULT_EPSILON
) -> RelevanceRecord:
    """Run the backward relevance pass over a forward trace."""
    net.check_trace(trace)
    if seed.shape != trace.entries[-1].y.shape:
        raise ConsistencyError(
            f"seed shape {seed.shape} does not match logits {trace.entries[-1].y.shape}"
        )
    n_layers = len(net.layers)
    rel_in: list = [None] * n_layers
    rel_out: list = [None] * n_layers
    rel_cols: dict[int, np.ndarray] = {}

    r = seed
    for i in reversed(range(n_layers)):
        entry = trace.entries[i]
        rel_out[i] = r
        r, extra = net.layers[i].relevance(entry.x, entry.aux, r, eps)
        if extra is not None:
            rel_cols[i] = extra
        rel_in[i] = r
    return RelevanceRecord(rel_in, rel_out, rel_cols, seed)


def parameter_relevance(record: RelevanceRecord, layer_index: int) -> np.ndarray:
    """Eq-style lifting for a dense layer: weight-shaped (out x in) tensor
    with rel(w[j, k]) = sum over samples of rel_in[k] + rel_out[j]."""
    rin, rout = record.rel_in[layer_index], record.rel_out[layer_index]
    if rin is None or rout is None:
        raise ConsistencyError(f"no boundary relevance recorded for layer {layer_index}")
    a = rin.sum(axis=0)   # per input element, summed over samples
    b = rout.sum(axis=0)  # per output element
    return np.add.outer(b, a)


def conv_parameter_relevance(record: RelevanceRecord, net: Network, layer_index: int) -> np.ndarray:
    """Same lifting for a conv layer via its unrolled FC form; output
    positions sharing a weight are summed. Returns an
    out_ch x in_ch x kh x kw tensor."""
    layer = net.layers[layer_index]
    if not isinstance(layer, Conv2D):
        raise ConsistencyError(f"layer {layer_index} is not a Conv2D")
    if layer_index not in record.rel_cols:
        raise ConsistencyError(f"no column relevance recorded for layer {layer_index}")
    cols_rel = record.rel_cols[layer_index]            # N x CKK x P
    out_rel = record.rel_out[layer_index]              # N x out_ch x Ho x Wo
    n = cols_rel.shape[0]
    # every (sample, position) pair contributes rel_col[f] + rel_out[o], so
    # rel(w2[o, f]) = sum_{n,p} cols_rel[n,f,p] + sum_{n,p} out_rel[n,o,p]
    a = cols_rel.sum(axis=(0, 2))
    b = out_rel.reshape(n, layer.out_channels, -1).sum(axis=(0, 2))
    return np.add.outer(b, a).reshape(layer.params["w"].shape)


def parameter_relevance_table(
    record: RelevanceRecord, net: Network
) -> dict[int, np.ndarray]:
    """Weight-relevance tensors for every prunable layer."""
    out = {}
    for i in net.prunable_indices:
        layer = net.layers[i]
        if isinstance(layer, Conv2D):
            out[i] = conv_parameter_relevance(record, net, i)
        elif isinstance(layer, Dense):
            out[i] = parameter_relevance(record, i)
    return out


def dump_record_csv(record: RelevanceRecord, net: Network, path) -> None:
    """Per-unit parameter relevance, for inspection."""
    table = parameter_relevance_table(record, net)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["layer", "unit", "relevance"])
        for i in sorted(table):
            rel_w = table[i]
            per_unit = rel_w.reshape(rel_w.shape[0], -1).mean(axis=1)
            for u, val in enumerate(per_unit):
                writer.writerow([i, u, repr(float(val))])
