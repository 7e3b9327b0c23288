"""Checkpoint container: one file holding everything a resume needs.

Layout (all integers little-endian):

    magic   b"BCLCKPT1"
    u64     JSON header length
    bytes   JSON header (UTF-8, sorted keys): format version, architecture
            name and kwargs, next epoch index, the full train config, and
            an array index of {name, shape, offset, nbytes} entries
    bytes   concatenated raw float32 array payloads, C-order

Arrays cover latent weights, biases, batchnorm scale/shift and running
statistics, and the optimizer momentum buffers (prefixed "momentum:").
Byte-identical for identical in-memory state, so resumed runs can be
compared bitwise against uninterrupted ones.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile

import numpy as np

from .layers import QuantizationPolicy
from .net import Network, build_network
from .train import TrainConfig, policy_from_config

MAGIC = b"BCLCKPT1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised when a checkpoint file cannot be parsed."""


def _atomic_write(path, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, net: Network, cfg: TrainConfig, epoch_next: int,
                    buffers: dict[str, np.ndarray]) -> None:
    arrays = dict(net.state_arrays())
    for name, buf in sorted(buffers.items()):
        arrays[f"momentum:{name}"] = buf

    index = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        raw = np.ascontiguousarray(arrays[name], dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(arrays[name].shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)

    header = {
        "format": FORMAT_VERSION,
        "arch": net.arch,
        "arch_kwargs": net.arch_kwargs,
        "epoch_next": int(epoch_next),
        "config": dataclasses.asdict(cfg),
        "arrays": index,
    }
    header_bytes = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode()
    payload = (MAGIC + len(header_bytes).to_bytes(8, "little")
               + header_bytes + b"".join(blobs))
    _atomic_write(path, payload)


def load_checkpoint(path) -> tuple[Network, TrainConfig, int, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < len(MAGIC) + 8:
        raise CheckpointError(f"{path}: truncated file ({len(buf)} bytes) at offset 0")
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:8]!r} at offset 0")
    hlen = int.from_bytes(buf[len(MAGIC) : len(MAGIC) + 8], "little")
    body_at = len(MAGIC) + 8 + hlen
    if len(buf) < body_at:
        raise CheckpointError(f"{path}: truncated header at offset {len(MAGIC) + 8} "
                              f"(need {hlen} bytes)")
    try:
        header = json.loads(buf[len(MAGIC) + 8 : body_at])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header JSON at offset "
                              f"{len(MAGIC) + 8}: {exc}") from exc
    if header.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format {header.get('format')}")

    cfg = TrainConfig(**header["config"])
    net = build_network(header["arch"], policy_from_config(cfg), cfg.seed,
                        **header["arch_kwargs"])

    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        start = body_at + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(buf):
            raise CheckpointError(f"{path}: array {entry['name']!r} overruns the "
                                  f"file at offset {start}")
        flat = np.frombuffer(buf[start:end], dtype="<f4")
        arrays[entry["name"]] = flat.reshape(entry["shape"]).astype(np.float32)

    momentum = {name[len("momentum:"):]: arr for name, arr in arrays.items()
                if name.startswith("momentum:")}
    state = {name: arr for name, arr in arrays.items()
             if not name.startswith("momentum:")}
    net.load_state(state)
    return net, cfg, int(header["epoch_next"]), momentum
