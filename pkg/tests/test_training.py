import struct

import numpy as np
import pytest

from flexprune.errors import InputError, ParseError, TrainingError
from flexprune.layers import Dense, SoftmaxCrossEntropyHead
from flexprune.models import build_cnn
from flexprune.network import Network
from flexprune.training import (
    Dataset,
    SynthSpec,
    TrainConfig,
    adam_step,
    compute_scores,
    evaluate,
    load_idx,
    run_protocol,
    synth_dataset,
    write_metrics_csv,
)


def small_dataset(seed=0, n=60, classes=4):
    rng = np.random.default_rng(seed)
    images = rng.random((n, 1, 8, 8))
    labels = rng.integers(0, classes, n)
    return Dataset(images, labels, classes)


def small_net(seed=0, classes=4):
    return build_cnn(
        image_size=8, conv_channels=(4,), dense_units=8, classes=classes,
        cut_index=1, seed=seed,
    )


def test_dataset_label_validation():
    with pytest.raises(InputError):
        Dataset(np.zeros((2, 1, 4, 4)), np.array([0, 5]), classes=3)


def test_train_config_validates_technique():
    with pytest.raises(InputError):
        TrainConfig(technique="random")


def test_adam_single_step_hand_computed():
    # one step from zero moments: update = lr * g/|g| regardless of scale,
    # so a weight at 1.0 with lr 0.05 lands at 0.95 (up to adam_eps)
    layer = Dense(1, 1)
    layer.params["w"] = np.array([[1.0]])
    net = Network([layer, SoftmaxCrossEntropyHead(1)], (1,), cut_index=1)
    cfg = TrainConfig(learning_rate=0.05)
    adam_step(net, {0: {"w": np.array([[3.7]]), "b": np.zeros(1)}}, cfg)
    assert layer.params["w"][0, 0] == pytest.approx(0.95, abs=1e-6)


def test_adam_rejects_non_finite_gradients():
    layer = Dense(1, 1)
    net = Network([layer, SoftmaxCrossEntropyHead(1)], (1,), cut_index=1)
    with pytest.raises(TrainingError, match="layer 0"):
        adam_step(net, {0: {"w": np.array([[np.nan]])}}, TrainConfig())


def test_adam_leaves_frozen_params_untouched():
    net = small_net(seed=1)
    net.apply_mask(0, 2)
    frozen_row = net.layers[0].params["w"][2].copy()
    g = {
        i: {name: np.ones_like(p) for name, p in net.layers[i].params.items()}
        for i in (0, 4)
    }
    cfg = TrainConfig(learning_rate=0.1)
    adam_step(net, g, cfg)
    assert np.array_equal(net.layers[0].params["w"][2], frozen_row)
    st = net.opt_state[0]["w"]
    assert np.all(st.m[2] == 0.0)
    assert np.all(st.v[2] == 0.0)


def test_evaluate_counts_top1():
    net = small_net(seed=1)
    data = small_dataset(seed=1, n=20)
    acc = evaluate(net, data)
    logits, _ = net.forward(data.images)
    assert acc == (logits.argmax(axis=1) == data.labels).mean()
    with pytest.raises(InputError):
        evaluate(net, Dataset(np.zeros((0, 1, 8, 8)), np.zeros(0, dtype=int), 4))


def test_masked_units_stay_dead_through_training():
    net = small_net(seed=2)
    net.apply_mask(0, 1)
    net.apply_mask(4, 3)
    data = small_dataset(seed=2)
    cfg = TrainConfig(learning_rate=0.01, epochs_dense=3, epochs_pruned=0, batch_size=16, rho=0.0)
    run_protocol(net, data, data, cfg)
    assert np.all(net.layers[0].params["w"][1] == 0.0)
    assert net.layers[0].params["b"][1] == 0.0
    assert np.all(net.layers[4].params["w"][3] == 0.0)
    assert np.all(net.layers[4].params["w"][:, 64:128] == 0.0)  # channel 1 span


def test_protocol_epoch_structure():
    net = small_net(seed=3)
    data = small_dataset(seed=3)
    cfg = TrainConfig(learning_rate=0.01, epochs_dense=2, epochs_pruned=3, batch_size=16, rho=0.2)
    result = run_protocol(net, data, data, cfg)
    assert [m.phase for m in result.log] == ["dense"] * 2 + ["pruned"] * 3
    assert [m.epoch for m in result.log] == [1, 2, 3, 4, 5]
    assert result.plan is not None
    assert result.plan.achieved_fraction >= 0.2
    assert result.scores is not None


def test_protocol_rho_zero_never_scores():
    net = small_net(seed=3)
    data = small_dataset(seed=3)
    cfg = TrainConfig(learning_rate=0.01, epochs_dense=2, epochs_pruned=1, batch_size=16, rho=0.0)
    result = run_protocol(net, data, data, cfg)
    assert result.plan is None
    assert result.scores is None
    assert result.relevance_time_s == 0.0


def test_rho_zero_trajectory_identical_across_techniques():
    # with no pruning, the technique label cannot change the training run
    data = small_dataset(seed=4)
    finals = []
    for technique in ("magnitude", "relevance", "flexrel"):
        net = small_net(seed=4)
        cfg = TrainConfig(
            learning_rate=0.01, epochs_dense=2, epochs_pruned=2,
            batch_size=16, rho=0.0, technique=technique,
        )
        result = run_protocol(net, data, data, cfg)
        finals.append([(m.loss, m.accuracy) for m in result.log])
    assert finals[0] == finals[1] == finals[2]


def test_protocol_is_deterministic():
    data = small_dataset(seed=5)
    runs = []
    for _ in range(2):
        net = small_net(seed=5)
        cfg = TrainConfig(
            learning_rate=0.01, epochs_dense=2, epochs_pruned=2,
            batch_size=16, rho=0.3, technique="flexrel", delta=0.5,
        )
        result = run_protocol(net, data, data, cfg)
        runs.append(
            ([(m.loss, m.accuracy) for m in result.log], sorted(result.plan.units))
        )
    assert runs[0] == runs[1]


def test_compute_scores_magnitude_skips_relevance():
    net = small_net(seed=6)
    data = small_dataset(seed=6)
    cfg = TrainConfig(technique="magnitude")
    table, t_rel = compute_scores(net, data, cfg)
    assert t_rel == 0.0
    assert all(row.raw_relevance == 0.0 for row in table.rows)


def test_compute_scores_relevance_times_the_pass():
    net = small_net(seed=6)
    # fresh nets have zero logits weights (uniform head), which seeds zero
    # relevance everywhere; give the head nonzero weights as training would
    w = net.layers[-2].params["w"]
    w[:] = np.random.default_rng(6).normal(size=w.shape)
    data = small_dataset(seed=6)
    table, t_rel = compute_scores(net, data, TrainConfig(technique="relevance"))
    assert t_rel > 0.0
    assert any(row.raw_relevance != 0.0 for row in table.rows)


def test_relevance_time_lands_on_scoring_epoch():
    net = small_net(seed=7)
    data = small_dataset(seed=7)
    cfg = TrainConfig(
        learning_rate=0.01, epochs_dense=2, epochs_pruned=1,
        batch_size=16, rho=0.2, technique="relevance",
    )
    result = run_protocol(net, data, data, cfg)
    assert result.log[1].t_relevance_s == result.relevance_time_s > 0.0
    assert result.log[0].t_relevance_s == 0.0
    assert result.log[2].t_relevance_s == 0.0


def test_write_metrics_csv(tmp_path):
    net = small_net(seed=8)
    data = small_dataset(seed=8)
    cfg = TrainConfig(learning_rate=0.01, epochs_dense=1, epochs_pruned=1, batch_size=16, rho=0.1)
    result = run_protocol(net, data, data, cfg)
    path = tmp_path / "metrics.csv"
    write_metrics_csv(result.log, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,phase,loss,accuracy,t_fwd_bwd_s,t_relevance_s"
    assert len(lines) == 3


# ------------------------------------------------------------------- datasets

def write_idx_images(path, images):
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, h, w))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def test_load_idx_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (10, 8, 8)).astype(np.uint8)
    labels = rng.integers(0, 3, 10).astype(np.uint8)
    labels[0] = 2  # pin the class count
    write_idx_images(tmp_path / "imgs", images)
    write_idx_labels(tmp_path / "lbls", labels)
    data = load_idx(tmp_path / "imgs", tmp_path / "lbls")
    assert data.images.shape == (10, 1, 8, 8)
    assert data.images.max() <= 1.0
    assert np.array_equal(data.images[0, 0], images[0] / 255.0)
    assert np.array_equal(data.labels, labels)
    assert data.classes == 3


def test_load_idx_bad_magic(tmp_path):
    (tmp_path / "bad").write_bytes(struct.pack(">IIII", 0x123, 1, 2, 2) + b"\x00" * 4)
    with pytest.raises(ParseError, match="magic"):
        load_idx(tmp_path / "bad", tmp_path / "bad")


def test_load_idx_truncated(tmp_path):
    (tmp_path / "short").write_bytes(struct.pack(">IIII", 0x803, 5, 8, 8) + b"\x00" * 10)
    with pytest.raises(ParseError):
        load_idx(tmp_path / "short", tmp_path / "short")


def test_load_idx_count_mismatch(tmp_path):
    images = np.zeros((4, 8, 8), dtype=np.uint8)
    write_idx_images(tmp_path / "imgs", images)
    write_idx_labels(tmp_path / "lbls", np.zeros(3, dtype=np.uint8))
    with pytest.raises(ParseError, match="counts"):
        load_idx(tmp_path / "imgs", tmp_path / "lbls")


def test_synth_spec_validation():
    with pytest.raises(InputError):
        SynthSpec(mode="circles")
    with pytest.raises(InputError):
        SynthSpec(size=15, blob_cells=4)


def test_synth_dataset_shapes_and_split():
    spec = SynthSpec(n_train=100, n_test=40)
    train, test = synth_dataset(spec, seed=1)
    assert train.images.shape == (100, 1, 16, 16)
    assert test.images.shape == (40, 1, 16, 16)
    pooled = np.concatenate([train.images, test.images])
    assert abs(pooled.mean()) < 1e-9 and abs(pooled.std() - 1.0) < 1e-9
    assert train.classes == test.classes == 10


def test_synth_dataset_deterministic():
    spec = SynthSpec(n_train=50, n_test=20, mode="blobs")
    a_train, a_test = synth_dataset(spec, seed=9)
    b_train, b_test = synth_dataset(spec, seed=9)
    assert np.array_equal(a_train.images, b_train.images)
    assert np.array_equal(a_test.labels, b_test.labels)
    c_train, _ = synth_dataset(spec, seed=10)
    assert not np.array_equal(a_train.images, c_train.images)


def test_synth_dataset_is_learnable():
    spec = SynthSpec(n_train=300, n_test=100, classes=4, noise=0.2)
    train, test = synth_dataset(spec, seed=2)
    net = build_cnn(conv_channels=(4,), dense_units=16, classes=4, cut_index=1, seed=1)
    cfg = TrainConfig(learning_rate=0.01, epochs_dense=8, epochs_pruned=0, batch_size=50, rho=0.0)
    result = run_protocol(net, train, test, cfg)
    assert result.log[-1].accuracy > 0.5
