"""Analytic split-learning epoch-time and bandwidth model.

The device runs layers [0, cut_index), the server the rest; per epoch they
exchange the cut-boundary activations (uplink) and their gradients
(downlink). Pruned channels at the cut are not transmitted. Compute time
is modeled from active multiply-accumulate counts (backward pass costed at
2x forward); the one-time relevance pass is charged, for the techniques
that need it, in the scoring epoch only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .layers import Conv2D, Dense
from .network import Network

BYTES_PER_ELEMENT = 8  # float64 activations

DEFAULT_UPLINK_BPS = 150e6
DEFAULT_DOWNLINK_BPS = 20e6


@dataclass
class LinkModel:
    uplink_rate: float = DEFAULT_UPLINK_BPS     # bits/s
    downlink_rate: float = DEFAULT_DOWNLINK_BPS  # bits/s
    transfer_overhead_s: float = 0.0

    def __post_init__(self):
        if self.uplink_rate <= 0 or self.downlink_rate <= 0:
            raise InputError("link rates must be positive")


@dataclass
class ComputeModel:
    device_throughput: float = 5e9   # MAC/s
    server_throughput: float = 50e9  # MAC/s
    relevance_cost_factor: float = 2.0  # MACs per relevance pass, relative to forward
    backward_cost_factor: float = 2.0   # backward MACs relative to forward

    def __post_init__(self):
        if self.device_throughput <= 0 or self.server_throughput <= 0:
            raise InputError("throughputs must be positive")


@dataclass
class EpochTimeBreakdown:
    epoch: int
    t_device_compute: float
    t_server_compute: float
    t_uplink: float
    t_downlink: float
    t_relevance: float
    bytes_up: int
    bytes_down: int

    @property
    def total(self) -> float:
        return (
            self.t_device_compute
            + self.t_server_compute
            + self.t_uplink
            + self.t_downlink
            + self.t_relevance
        )


def layer_forward_macs(net: Network) -> list[int]:
    """Active forward multiply-accumulates per sample, per layer.

    An active MAC is one whose weight is neither pruned away at its own
    unit nor frozen by an upstream channel removal, so compute shrinks
    exactly with the surviving parameters.
    """
    macs = []
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Dense):
            macs.append(int(net.trainable[i]["w"].sum()))
        elif isinstance(layer, Conv2D):
            _, ho, wo = net.boundary_shapes[i + 1]
            macs.append(int(net.trainable[i]["w"].sum()) * ho * wo)
        else:
            macs.append(0)
    return macs


def cut_payload(
    net: Network, cut_index: int, batch_size: int, batches_per_epoch: int
) -> tuple[int, int]:
    """Bytes exchanged per epoch at the cut boundary (activations up,
    activation gradients down); pruned cut channels are excluded."""
    elements = net.active_boundary_elements(cut_index)
    per_epoch = batches_per_epoch * batch_size * elements * BYTES_PER_ELEMENT
    return per_epoch, per_epoch


def epoch_time(
    net: Network,
    link: LinkModel,
    compute: ComputeModel,
    batch_size: int,
    batches_per_epoch: int,
    epoch: int = 1,
    technique: str = "magnitude",
    is_scoring_epoch: bool = False,
    scoring_samples: int = 0,
) -> EpochTimeBreakdown:
    """Closed-form time breakdown for one training epoch."""
    macs = layer_forward_macs(net)
    cut = net.cut_index
    fwd_device = sum(macs[:cut])
    fwd_server = sum(macs[cut:])
    samples = batch_size * batches_per_epoch
    pass_factor = 1.0 + compute.backward_cost_factor  # forward + backward

    t_device = pass_factor * fwd_device * samples / compute.device_throughput
    t_server = pass_factor * fwd_server * samples / compute.server_throughput

    bytes_up, bytes_down = cut_payload(net, cut, batch_size, batches_per_epoch)
    t_up = bytes_up * 8 / link.uplink_rate + link.transfer_overhead_s
    t_down = bytes_down * 8 / link.downlink_rate + link.transfer_overhead_s

    t_rel = 0.0
    if is_scoring_epoch and technique in ("relevance", "flexrel"):
        t_rel = compute.relevance_cost_factor * scoring_samples * (
            fwd_device / compute.device_throughput + fwd_server / compute.server_throughput
        )
    return EpochTimeBreakdown(epoch, t_device, t_server, t_up, t_down, t_rel, bytes_up, bytes_down)


@dataclass
class TimeToAccuracy:
    reached: bool
    seconds: float = 0.0
    cumulative_bytes: int = 0
    epoch: int | None = None


def time_to_accuracy(
    accuracies: list[float], breakdowns: list[EpochTimeBreakdown], target: float
) -> TimeToAccuracy:
    """Cumulative time and bytes up to the first epoch reaching the target
    test accuracy; an unreached target is a result, not an error."""
    if len(accuracies) != len(breakdowns):
        raise InputError("accuracy log and breakdowns differ in length")
    seconds = 0.0
    total_bytes = 0
    for acc, bd in zip(accuracies, breakdowns):
        seconds += bd.total
        total_bytes += bd.bytes_up + bd.bytes_down
        if acc >= target:
            return TimeToAccuracy(True, seconds, total_bytes, bd.epoch)
    return TimeToAccuracy(False)


def write_breakdown_csv(breakdowns: list[EpochTimeBreakdown], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["epoch", "t_device", "t_server", "t_up", "t_down", "t_rel", "bytes_up", "bytes_down"]
        )
        for bd in breakdowns:
            writer.writerow(
                [bd.epoch]
                + [
                    repr(v)
                    for v in (
                        bd.t_device_compute,
                        bd.t_server_compute,
                        bd.t_uplink,
                        bd.t_downlink,
                        bd.t_relevance,
                    )
                ]
                + [bd.bytes_up, bd.bytes_down]
            )
