import numpy as np
import pytest

from flexprune.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from flexprune.errors import (
    BadMagicError,
    ChecksumError,
    TruncatedError,
    VersionError,
)
from flexprune.models import build_cnn
from flexprune.training import Dataset, TrainConfig, adam_step


def trained_net(seed=7):
    """A network with non-trivial params, masks, and optimizer state."""
    net = build_cnn(conv_channels=(4,), dense_units=8, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.random((16, 1, 16, 16))
    y = rng.integers(0, 10, 16)
    cfg = TrainConfig(learning_rate=0.01)
    for _ in range(3):
        _, trace = net.forward(x)
        grads = net.backward(trace, y)
        adam_step(net, grads, cfg)
    net.apply_mask(0, 1)
    net.apply_mask(4, 5)
    net.epoch = 3
    return net


def assert_networks_equal(a, b):
    assert a.input_shape == b.input_shape
    assert a.cut_index == b.cut_index
    assert a.epoch == b.epoch
    assert a.prunable_indices == b.prunable_indices
    assert len(a.layers) == len(b.layers)
    for la, lb in zip(a.layers, b.layers):
        assert la.kind == lb.kind
        assert la.spec() == lb.spec()
        for name in la.params:
            assert np.array_equal(la.params[name], lb.params[name])
    for i in a.masks:
        assert np.array_equal(a.masks[i], b.masks[i])
    for i in a.trainable:
        for name in a.trainable[i]:
            assert np.array_equal(a.trainable[i][name], b.trainable[i][name])
    assert set(a.opt_state) == set(b.opt_state)
    for i in a.opt_state:
        for name, st in a.opt_state[i].items():
            other = b.opt_state[i][name]
            assert st.t == other.t
            assert np.array_equal(st.m, other.m)
            assert np.array_equal(st.v, other.v)


def test_round_trip(tmp_path):
    net = trained_net()
    path = tmp_path / "model.fxpr"
    save_checkpoint(net, path)
    assert_networks_equal(net, load_checkpoint(path))


def test_round_trip_preserves_behavior(tmp_path):
    net = trained_net()
    path = tmp_path / "model.fxpr"
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)
    x = np.random.default_rng(0).random((4, 1, 16, 16))
    ya, _ = net.forward(x)
    yb, _ = loaded.forward(x)
    assert np.array_equal(ya, yb)


def test_save_is_deterministic(tmp_path):
    net = trained_net()
    p1, p2 = tmp_path / "a.fxpr", tmp_path / "b.fxpr"
    save_checkpoint(net, p1)
    save_checkpoint(net, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_magic_bytes_lead_the_file(tmp_path):
    path = tmp_path / "model.fxpr"
    save_checkpoint(trained_net(), path)
    assert path.read_bytes()[:4] == MAGIC


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.fxpr"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(BadMagicError):
        load_checkpoint(path)


def test_too_short(tmp_path):
    path = tmp_path / "short.fxpr"
    path.write_bytes(b"FX")
    with pytest.raises(BadMagicError):
        load_checkpoint(path)


def test_unsupported_version(tmp_path):
    path = tmp_path / "model.fxpr"
    save_checkpoint(trained_net(), path)
    blob = bytearray(path.read_bytes())
    blob[4] = 99
    path.write_bytes(bytes(blob))
    with pytest.raises(VersionError):
        load_checkpoint(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "model.fxpr"
    save_checkpoint(trained_net(), path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(TruncatedError):
        load_checkpoint(path)


def test_corrupted_payload_byte(tmp_path):
    path = tmp_path / "model.fxpr"
    save_checkpoint(trained_net(), path)
    blob = bytearray(path.read_bytes())
    blob[-100] ^= 0xFF  # flip a payload byte, leave framing intact
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        load_checkpoint(path)
