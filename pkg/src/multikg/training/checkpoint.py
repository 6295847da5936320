"""Binary checkpoints.

Layout (little-endian)::

    b"MUKGCKPT"  u32 version  32-byte config digest  u64 header length
    header: UTF-8 JSON (model kind, table order, optimizer, RNG state, extras)
    one embedding block per parameter table, then per optimizer state array
    32-byte SHA-256 of everything above

Blocks use the embedding binary format with each array flattened to 2-D;
the header records the original shapes.  Loading verifies the trailer before
building anything, so a corrupted file yields an error and no state.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from ..models import ModelKind, ModelParams, decode_matrix, encode_matrix
from .optim import Optimizer

MAGIC = b"MUKGCKPT"
VERSION = 1
_HEAD = struct.Struct("<8sI32sQ")


class CheckpointError(ValueError):
    pass


def config_digest(config: dict) -> bytes:
    """SHA-256 of the canonical JSON form of ``config``."""
    return hashlib.sha256(json.dumps(config, sort_keys=True, separators=(",", ":")).encode()).digest()


@dataclass
class Checkpoint:
    params: ModelParams
    optimizer: Optimizer
    config: dict
    rng: dict
    extra: dict = field(default_factory=dict)


def _block(arr):
    arr = np.asarray(arr)
    flat = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(-1, 1)
    return encode_matrix(flat.astype(np.float64))


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    P, opt = ckpt.params, ckpt.optimizer
    names = sorted(P.tables)
    opt_arrays = opt.state_arrays()
    header = {
        "kind": {"tag": P.kind.tag, "norm": P.kind.norm, "squared": P.kind.squared},
        "n_entities": P.n_entities, "n_relations": P.n_relations, "dim": P.dim, "meta": P.meta,
        "tables": [[n, P.index[n], list(P.tables[n].shape)] for n in names],
        "optimizer": opt.describe(),
        "optimizer_state": [[k, list(a.shape), str(a.dtype)] for k, a in opt_arrays.items()],
        "config": ckpt.config,
        "rng": ckpt.rng,
        "extra": ckpt.extra,
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    parts = [_HEAD.pack(MAGIC, VERSION, config_digest(ckpt.config), len(hdr)), hdr]
    parts += [_block(P.tables[n]) for n in names]
    parts += [_block(a) for a in opt_arrays.values()]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if len(buf) < _HEAD.size + 32:
        raise CheckpointError("checkpoint truncated")
    magic, version, digest, hlen = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    body, trailer = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != trailer:
        raise CheckpointError("checkpoint checksum mismatch (file corrupted)")
    try:
        header = json.loads(body[_HEAD.size:_HEAD.size + hlen])
    except ValueError as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from None
    if config_digest(header["config"]) != digest:
        raise CheckpointError("config digest mismatch")
    off = _HEAD.size + hlen
    tables, index = {}, {}
    try:
        for name, idx, shape in header["tables"]:
            arr, off = decode_matrix(body, off)
            tables[name] = arr.reshape(shape).copy()
            index[name] = idx
        opt_arrays = {}
        for key, shape, dtype in header["optimizer_state"]:
            arr, off = decode_matrix(body, off)
            opt_arrays[key] = arr.reshape(shape).astype(dtype)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    if off != len(body):
        raise CheckpointError("unexpected trailing data in checkpoint")
    k = header["kind"]
    params = ModelParams(ModelKind(k["tag"], k["norm"], k["squared"]), tables, index,
                         header["n_entities"], header["n_relations"], header["dim"], header["meta"])
    o = header["optimizer"]
    opt = Optimizer(o["kind"], o["lr"], o["eps"], o["beta1"], o["beta2"])
    opt.load_state_arrays(opt_arrays)
    return Checkpoint(params, opt, header["config"], header["rng"], header["extra"])


def atomic_write(path, data: bytes) -> None:
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write(path, encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
