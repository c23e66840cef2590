"""Versioned binary checkpoint container.

Byte layout (all integers little-endian):

    offset  size  field
    0       4     magic "FXPR"
    4       4     u32 format version (currently 1)
    8       4     u32 header length H
    12      H     UTF-8 JSON header
    12+H    P     payload: the header's arrays, concatenated in order;
                  float64 arrays little-endian, bool arrays as raw bytes
    12+H+P  4     u32 CRC-32 of the payload bytes

The JSON header describes the architecture (layer kinds and constructor
arguments, input shape, cut index, prunable indices, epoch counter) and an
ordered array table: name, dtype ("f8" or "b1"), shape. Arrays cover
parameters, masks, trainable masks, and Adam optimizer state, so a
round-trip reproduces the network bit-exactly.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .errors import BadMagicError, ChecksumError, TruncatedError, VersionError
from .layers import LAYER_KINDS
from .network import AdamState, Network

MAGIC = b"FXPR"
VERSION = 1


def _array_table(net: Network) -> list[tuple[str, np.ndarray]]:
    out: list[tuple[str, np.ndarray]] = []
    for i, layer in enumerate(net.layers):
        for name, p in layer.params.items():
            out.append((f"param/{i}/{name}", p))
    for i, mask in net.masks.items():
        out.append((f"mask/{i}", mask))
    for i, tr in net.trainable.items():
        for name, m in tr.items():
            out.append((f"trainable/{i}/{name}", m))
    for i, states in net.opt_state.items():
        for name, st in states.items():
            out.append((f"adam_m/{i}/{name}", st.m))
            out.append((f"adam_v/{i}/{name}", st.v))
    return out


def save_checkpoint(net: Network, path) -> None:
    arrays = _array_table(net)
    header = {
        "input_shape": list(net.input_shape),
        "cut_index": net.cut_index,
        "epoch": net.epoch,
        "prunable_indices": net.prunable_indices,
        "layers": [{"kind": l.kind, "args": l.spec()} for l in net.layers],
        "adam_t": {
            f"{i}/{name}": st.t
            for i, states in net.opt_state.items()
            for name, st in states.items()
        },
        "arrays": [
            {"name": name, "dtype": "b1" if a.dtype == bool else "f8", "shape": list(a.shape)}
            for name, a in arrays
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(
        a.tobytes() if a.dtype == bool else a.astype("<f8").tobytes() for _, a in arrays
    )
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload)))


def load_checkpoint(path) -> Network:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise BadMagicError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    if len(blob) < 12 + hlen + 4:
        raise TruncatedError("checkpoint header truncated")
    header = json.loads(blob[12 : 12 + hlen].decode())

    sizes = {"f8": 8, "b1": 1}
    payload_len = sum(
        int(np.prod(a["shape"])) * sizes[a["dtype"]] for a in header["arrays"]
    )
    end = 12 + hlen + payload_len
    if len(blob) < end + 4:
        raise TruncatedError("checkpoint payload truncated")
    payload = blob[12 + hlen : end]
    (stored_crc,) = struct.unpack("<I", blob[end : end + 4])
    if zlib.crc32(payload) != stored_crc:
        raise ChecksumError("checkpoint payload checksum mismatch")

    layers = [LAYER_KINDS[spec["kind"]](**spec["args"]) for spec in header["layers"]]
    net = Network(
        layers,
        tuple(header["input_shape"]),
        cut_index=header["cut_index"],
        prunable_indices=header["prunable_indices"],
    )
    net.epoch = header["epoch"]

    offset = 0
    values: dict[str, np.ndarray] = {}
    for a in header["arrays"]:
        count = int(np.prod(a["shape"]))
        nbytes = count * sizes[a["dtype"]]
        raw = payload[offset : offset + nbytes]
        offset += nbytes
        dtype = np.bool_ if a["dtype"] == "b1" else np.dtype("<f8")
        values[a["name"]] = np.frombuffer(raw, dtype=dtype).reshape(a["shape"]).copy()

    for name, arr in values.items():
        kind, idx, *rest = name.split("/")
        i = int(idx)
        if kind == "param":
            net.layers[i].params[rest[0]] = arr.astype(np.float64)
        elif kind == "mask":
            net.masks[i] = arr
        elif kind == "trainable":
            net.trainable[i][rest[0]] = arr
        elif kind in ("adam_m", "adam_v"):
            states = net.opt_state.setdefault(i, {})
            st = states.setdefault(
                rest[0], AdamState(np.zeros_like(arr), np.zeros_like(arr))
            )
            if kind == "adam_m":
                st.m = arr.astype(np.float64)
            else:
                st.v = arr.astype(np.float64)
    for key, t in header.get("adam_t", {}).items():
        idx, name = key.split("/")
        net.opt_state[int(idx)][name].t = t
    return net
