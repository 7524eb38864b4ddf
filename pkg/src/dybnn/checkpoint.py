"""Checkpoint container and metric logs.

Container layout, little-endian throughout::

    magic   8 bytes  b"DYBNNCKP"
    version uint32
    hlen    uint64   length of the JSON header
    header  hlen bytes (utf-8 JSON: blob directory, config, step, metadata)
    blobs   raw array bytes at the offsets listed in the header
    digest  32 bytes sha256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptionError, IngestionError, VersionError

MAGIC = b"DYBNNCKP"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
GROUPS = ("params", "buffers", "optimizer")


@dataclass
class Checkpoint:
    params: dict
    config: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)  # arrays only
    optimizer_meta: dict = field(default_factory=dict)
    step: int = 0
    meta: dict = field(default_factory=dict)


def _le(a):
    a = np.asarray(a)
    return a.astype(a.dtype.newbyteorder("<"), copy=False)


def encode(ck: Checkpoint) -> bytes:
    entries, blobs, offset = [], [], 0
    for group in GROUPS:
        for name, arr in getattr(ck, group).items():
            a = np.ascontiguousarray(_le(arr))
            raw = a.tobytes()
            entries.append({
                "group": group, "name": name, "shape": list(a.shape),
                "dtype": a.dtype.str, "offset": offset, "nbytes": len(raw),
            })
            blobs.append(raw)
            offset += len(raw)
    header = json.dumps({
        "entries": entries, "config": ck.config, "step": int(ck.step),
        "optimizer_meta": ck.optimizer_meta, "meta": ck.meta,
    }, sort_keys=True).encode()
    body = _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def decode(buf: bytes, path="<bytes>") -> Checkpoint:
    if len(buf) < _PREFIX.size + 32:
        raise CorruptionError(f"{path}: file too short for a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise CorruptionError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, this build reads version {VERSION}")
    body, digest = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptionError(f"{path}: checksum mismatch")
    start = _PREFIX.size
    try:
        header = json.loads(buf[start : start + hlen])
    except ValueError as e:
        raise CorruptionError(f"{path}: unreadable header") from e
    base = start + hlen
    groups = {g: {} for g in GROUPS}
    for e in header["entries"]:
        lo = base + e["offset"]
        if lo + e["nbytes"] > len(body):
            raise CorruptionError(f"{path}: blob {e['name']} runs past end of file")
        arr = np.frombuffer(body, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)), offset=lo)
        groups[e["group"]][e["name"]] = arr.reshape(e["shape"]).copy()
    return Checkpoint(
        groups["params"], header["config"], groups["buffers"], groups["optimizer"],
        header.get("optimizer_meta", {}), header["step"], header.get("meta", {}),
    )


def save_checkpoint(path, ck: Checkpoint):
    """Write atomically: a temp file in the target directory is renamed into place."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".ckpt-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(encode(ck))
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path) -> Checkpoint:
    path = os.fspath(path)
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise IngestionError(f"cannot open checkpoint: {e.strerror or e}", path=path, offset=0) from e
    return decode(buf, path)


def model_checkpoint(model, config, step=0, optimizer=None, meta=None) -> Checkpoint:
    params = {n: p.data for n, p in model.named_parameters()}
    buffers = {n: b for n, b in model.named_buffers()}
    opt, opt_meta = ({}, {}) if optimizer is None else optimizer.state()
    return Checkpoint(params, config, buffers, opt, opt_meta, step, dict(meta or {}))


def restore_model(model, ck: Checkpoint, strict=True):
    state = dict(ck.params)
    state.update(ck.buffers)
    model.load_state_dict(state, strict=strict)
    return model


# --------------------------------------------------------------------------
# metrics


class MetricsLog:
    """Append-only line-delimited JSON records."""

    def __init__(self, path):
        self.path = os.fspath(path)
        os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
        open(self.path, "w").close()

    def write(self, record: dict):
        with open(self.path, "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")


def read_metrics(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
