"""RCKP checkpoint format.

Layout (little endian)::

    b"RCKP" | u32 version | 32-byte config hash | u32 n_params
    n_params x (u16 name_len | name | u32 rank | rank x u64 | f64 data)
    u8 has_optimizer
      [u8 kind (0 sgd, 1 adam) | f64 lr | u64 step
       adam only: per parameter, in table order: u8 present [| f64 m | f64 v]]
    u32 meta_len | UTF-8 JSON metadata (sorted keys)
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .optim import OptimizerState

MAGIC = b"RCKP"
VERSION = 1


@dataclass
class Checkpoint:
    config_hash: str
    params: dict[str, np.ndarray]
    optimizer: OptimizerState | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.metadata.get("kind", "")

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        digest = bytes.fromhex(self.config_hash)
        if len(digest) != 32:
            raise CheckpointError("config hash must be 32 bytes")
        buf.write(MAGIC + struct.pack("<I", VERSION) + digest)
        names = sorted(self.params)
        buf.write(struct.pack("<I", len(names)))
        for name in names:
            arr = np.ascontiguousarray(self.params[name], dtype="<f8")
            raw = name.encode()
            buf.write(struct.pack("<H", len(raw)) + raw)
            buf.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
            buf.write(arr.tobytes())
        opt = self.optimizer
        if opt is None:
            buf.write(b"\x00")
        else:
            buf.write(b"\x01" + struct.pack("<BdQ", 1 if opt.kind == "adam" else 0,
                                             opt.learning_rate, opt.step))
            if opt.kind == "adam":
                for name in names:
                    if name in opt.m:
                        buf.write(b"\x01")
                        buf.write(np.ascontiguousarray(opt.m[name], dtype="<f8").tobytes())
                        buf.write(np.ascontiguousarray(opt.v[name], dtype="<f8").tobytes())
                    else:
                        buf.write(b"\x00")
        meta = json.dumps(self.metadata, sort_keys=True, separators=(",", ":")).encode()
        buf.write(struct.pack("<I", len(meta)) + meta)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if data[:4] != MAGIC:
            raise CheckpointError("not an RCKP checkpoint (bad magic)")
        r = _Reader(data, 4)
        (version,) = r.unpack("<I")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        config_hash = r.take(32).hex()
        (n,) = r.unpack("<I")
        params = {}
        for _ in range(n):
            (ln,) = r.unpack("<H")
            name = r.take(ln).decode()
            (rank,) = r.unpack("<I")
            shape = r.unpack(f"<{rank}Q")
            params[name] = r.array(shape)
        (has_opt,) = r.unpack("<B")
        optimizer = None
        if has_opt:
            kind, lr, step = r.unpack("<BdQ")
            optimizer = OptimizerState("adam" if kind == 1 else "sgd", lr, step=step)
            if kind == 1:
                for name in sorted(params):
                    (present,) = r.unpack("<B")
                    if present:
                        optimizer.m[name] = r.array(params[name].shape)
                        optimizer.v[name] = r.array(params[name].shape)
        (ml,) = r.unpack("<I")
        metadata = json.loads(r.take(ml).decode())
        if r.pos != len(data):
            raise CheckpointError("trailing bytes after checkpoint metadata")
        return cls(config_hash, params, optimizer, metadata)


class _Reader:
    def __init__(self, data: bytes, pos: int):
        self.data, self.pos = data, pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, shape) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def save_checkpoint(path, ckpt: Checkpoint) -> str:
    """Write the checkpoint; returns its sha256."""
    data = ckpt.to_bytes()
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path, expected_hash: str | None = None, force: bool = False) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    ckpt = Checkpoint.from_bytes(path.read_bytes())
    if expected_hash is not None and ckpt.config_hash != expected_hash and not force:
        raise CheckpointError(
            f"config hash mismatch for {path}: checkpoint {ckpt.config_hash[:12]}..., "
            f"current config {expected_hash[:12]}... (use --force to override)")
    return ckpt


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def params_sha256(params: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    return h.hexdigest()
