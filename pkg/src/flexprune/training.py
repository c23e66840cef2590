"""Datasets, Adam optimization, and the dense-then-pruned training protocol.

The protocol trains `epochs_dense` epochs with the full network, computes
the pruning scores once (the relevance pass, when the technique needs it,
runs over a fixed scoring batch seeded with the ground-truth labels),
applies the prune plan, then trains `epochs_pruned` further epochs.
"""

from __future__ import annotations

import csv
import struct
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConstraintError, InputError, ParseError, TrainingError
from .network import AdamState, Network
from .pruning import (
    PrunePlan,
    ScoreTable,
    apply_plan,
    build_score_table,
    magnitude_scores,
    plan_prune,
    relevance_unit_scores,
)
from .relevance import parameter_relevance_table, propagate_relevance, seed_output_relevance

TECHNIQUES = ("magnitude", "relevance", "flexrel")


@dataclass
class Dataset:
    images: np.ndarray  # N x C x H x W, values in [0, 1]
    labels: np.ndarray  # N int class indices
    classes: int

    def __post_init__(self):
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise InputError("labels outside [0, classes)")

    def __len__(self):
        return self.images.shape[0]


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs_dense: int = 10
    epochs_pruned: int = 40
    seed: int = 1
    scoring_batch_size: int = 256
    technique: str = "flexrel"
    delta: float = 0.5
    rho: float = 0.0
    norm_scope: str = "per-layer"
    lrp_eps: float = 1e-6
    # first-epoch learning rate multiplier; a gentle first lap lets the
    # zero-initialized head calibrate before full-size steps, which
    # otherwise can strand a narrow hidden layer entirely dead
    warmup_factor: float = 0.1

    def __post_init__(self):
        if self.technique not in TECHNIQUES:
            raise InputError(f"technique must be one of {TECHNIQUES}")


@dataclass
class EpochMetrics:
    epoch: int
    phase: str  # "dense" or "pruned"
    loss: float
    accuracy: float
    t_fwd_bwd_s: float
    t_relevance_s: float


@dataclass
class RunResult:
    net: Network
    log: list[EpochMetrics]
    plan: PrunePlan | None
    scores: ScoreTable | None
    relevance_time_s: float


def adam_step(net: Network, grads: dict[int, dict[str, np.ndarray]], config: TrainConfig) -> None:
    """One Adam update over every trainable parameter; frozen (masked)
    parameters stay untouched and their moment state is held at zero."""
    for i, pgrads in grads.items():
        layer = net.layers[i]
        states = net.opt_state.setdefault(i, {})
        for name, g in pgrads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in layer {i} ({name})")
            p = layer.params[name]
            active = net.trainable[i][name]
            st = states.setdefault(name, AdamState(np.zeros_like(p), np.zeros_like(p)))
            st.t += 1
            st.m = config.beta1 * st.m + (1 - config.beta1) * g
            st.v = config.beta2 * st.v + (1 - config.beta2) * g * g
            st.m *= active
            st.v *= active
            m_hat = st.m / (1 - config.beta1**st.t)
            v_hat = st.v / (1 - config.beta2**st.t)
            p -= config.learning_rate * active * m_hat / (np.sqrt(v_hat) + config.adam_eps)


def evaluate(net: Network, dataset: Dataset, batch_size: int = 256) -> float:
    """Top-1 accuracy over a split."""
    if len(dataset) == 0:
        raise InputError("empty evaluation split")
    correct = 0
    for start in range(0, len(dataset), batch_size):
        x = dataset.images[start : start + batch_size]
        y = dataset.labels[start : start + batch_size]
        logits, _ = net.forward(x)
        correct += int((logits.argmax(axis=1) == y).sum())
    return correct / len(dataset)


def _train_epoch(net: Network, dataset: Dataset, config: TrainConfig, rng: np.random.Generator) -> float:
    order = rng.permutation(len(dataset))
    losses = []
    head = net.layers[-1]
    for start in range(0, len(dataset), config.batch_size):
        idx = order[start : start + config.batch_size]
        x, y = dataset.images[idx], dataset.labels[idx]
        logits, trace = net.forward(x)
        loss = head.loss(logits, y)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {net.epoch + 1}")
        grads = net.backward(trace, y)
        adam_step(net, grads, config)
        losses.append(loss)
    net.epoch += 1
    return float(np.mean(losses))


def compute_scores(
    net: Network, dataset: Dataset, config: TrainConfig
) -> tuple[ScoreTable, float]:
    """Score every prunable unit per the configured technique.

    Returns the table and the wall-clock relevance time (0 for the pure
    magnitude technique, which never runs the relevance pass).
    """
    raw_m = magnitude_scores(net)
    raw_r = None
    t_rel = 0.0
    if config.technique in ("relevance", "flexrel"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(config.seed + 0x5C0E)
        take = min(config.scoring_batch_size, len(dataset))
        idx = rng.choice(len(dataset), size=take, replace=False)
        x, y = dataset.images[idx], dataset.labels[idx]
        logits, trace = net.forward(x)
        seed = seed_output_relevance(logits, y)
        record = propagate_relevance(net, trace, seed, config.lrp_eps)
        rel_w = parameter_relevance_table(record, net)
        raw_r = relevance_unit_scores(net, rel_w)
        t_rel = time.perf_counter() - t0
    delta = {"magnitude": 0.0, "relevance": 1.0}.get(config.technique, config.delta)
    table = build_score_table(net, raw_m, raw_r, delta, config.norm_scope)
    return table, t_rel


def run_protocol(net: Network, train: Dataset, test: Dataset, config: TrainConfig) -> RunResult:
    """Dense epochs, one-shot scoring + pruning, pruned epochs."""
    rng = np.random.default_rng(config.seed)
    log: list[EpochMetrics] = []
    plan = None
    scores = None
    t_rel_total = 0.0

    def epoch_pass(phase: str, cfg: TrainConfig = config, t_rel: float = 0.0):
        t0 = time.perf_counter()
        loss = _train_epoch(net, train, cfg, rng)
        t_fwd_bwd = time.perf_counter() - t0
        acc = evaluate(net, test)
        log.append(EpochMetrics(net.epoch, phase, loss, acc, t_fwd_bwd, t_rel))

    warm = replace(config, learning_rate=config.learning_rate * config.warmup_factor)
    for e in range(config.epochs_dense):
        epoch_pass("dense", warm if e == 0 else config)

    if config.rho > 0.0:
        scores, t_rel_total = compute_scores(net, train, config)
        plan = plan_prune(scores, config.rho)
        apply_plan(net, plan)
        if log:
            log[-1].t_relevance_s = t_rel_total

    for _ in range(config.epochs_pruned):
        epoch_pass("pruned")

    return RunResult(net, log, plan, scores, t_rel_total)


def write_metrics_csv(log: list[EpochMetrics], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "phase", "loss", "accuracy", "t_fwd_bwd_s", "t_relevance_s"])
        for row in log:
            writer.writerow(
                [row.epoch, row.phase]
                + [repr(v) for v in (row.loss, row.accuracy, row.t_fwd_bwd_s, row.t_relevance_s)]
            )


# ------------------------------------------------------------------ datasets

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801


def _read_idx(path, expected_magic: int) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4:
        raise ParseError(f"{path}: too short for an IDX header")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic != expected_magic:
        raise ParseError(f"{path}: bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise ParseError(f"{path}: truncated IDX dimension table")
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    count = int(np.prod(dims))
    if len(blob) - header != count:
        raise ParseError(
            f"{path}: payload length {len(blob) - header} does not match dims {dims}"
        )
    return np.frombuffer(blob, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label file pair; pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_MAGIC_IMAGES)
    labels = _read_idx(labels_path, IDX_MAGIC_LABELS)
    if images.shape[0] != labels.shape[0]:
        raise ParseError("image and label counts differ")
    n, h, w = images.shape
    images = images.reshape(n, 1, h, w).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    return Dataset(images, labels, classes=int(labels.max()) + 1)


@dataclass
class SynthSpec:
    classes: int = 10
    n_train: int = 1000
    n_test: int = 400
    size: int = 16
    noise: float = 0.35
    mode: str = "stripes"  # "stripes" or "blobs"
    frequency: float = 2.0           # stripes: cycles across the image
    prototypes_per_class: int = 24   # blobs: distinct patterns per class
    blob_cells: int = 4              # blobs: low-resolution grid extent

    def __post_init__(self):
        if self.mode not in ("stripes", "blobs"):
            raise InputError(f"unknown synthetic mode {self.mode!r}")
        if self.size % self.blob_cells != 0:
            raise InputError("size must be a multiple of blob_cells")


def synth_dataset(spec: SynthSpec, seed: int) -> tuple[Dataset, Dataset]:
    """Class-dependent geometric patterns plus additive Gaussian noise.

    stripes: class c is a sinusoidal grating at angle c * pi / classes with
    a random phase per sample, so orientation (not a pixel template) is the
    discriminating feature. Easy; a small net saturates it.

    blobs: each class owns `prototypes_per_class` random blocky blob
    patterns; a sample is one prototype plus noise. The memorization load
    scales with the prototype count, which makes accuracy degrade smoothly
    as capacity is pruned away.

    Train and test are drawn from one stream and split disjointly.
    """
    rng = np.random.default_rng(seed)
    n = spec.n_train + spec.n_test
    labels = np.arange(n) % spec.classes
    if spec.mode == "stripes":
        coords = (np.arange(spec.size) + 0.5) / spec.size
        v, u = np.meshgrid(coords, coords, indexing="ij")
        angles = labels * np.pi / spec.classes
        phases = rng.uniform(0, 2 * np.pi, n)
        proj = np.cos(angles)[:, None, None] * u + np.sin(angles)[:, None, None] * v
        images = np.sin(2 * np.pi * spec.frequency * proj + phases[:, None, None])
    else:
        scale = spec.size // spec.blob_cells
        base = rng.normal(size=(spec.classes * spec.prototypes_per_class, spec.blob_cells, spec.blob_cells))
        prototypes = np.kron(base, np.ones((scale, scale)))
        prototypes /= np.abs(prototypes).max(axis=(1, 2), keepdims=True)
        pick = rng.integers(0, spec.prototypes_per_class, n)
        images = prototypes[labels * spec.prototypes_per_class + pick]
    images = images + rng.normal(0.0, spec.noise, images.shape)
    # standardize: all-positive inputs make hidden-unit means dominate
    # their sample variation, which strands a fraction of ReLU units dead
    # at initialization and makes training seed-fragile
    images = (images - images.mean()) / images.std()
    images = images[:, None]
    perm = rng.permutation(n)
    tr, te = perm[: spec.n_train], perm[spec.n_train :]
    train = Dataset(images[tr], labels[tr], spec.classes)
    test = Dataset(images[te], labels[te], spec.classes)
    return train, test
