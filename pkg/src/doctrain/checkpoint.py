"""Binary checkpoint format.

Layout: magic, u32 version, u32 meta length + UTF-8 JSON meta, u32 tensor
count, per-tensor header (u16 name length + name, u8 ndim, u32 dims), then
the raw little-endian float32 payloads in header order, and a trailing sha256
digest of everything before it. Saving the result of a load reproduces the
file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptCheckpoint, StorageError, UnsupportedVersion

MAGIC = b"DTCK"
FORMAT_VERSION = 1
_DIGEST_SIZE = 32


@dataclass
class Checkpoint:
    meta: dict
    tensors: dict[str, np.ndarray]
    version: int = FORMAT_VERSION
    digest: str = field(default="", compare=False)

    def tensor(self, name: str) -> np.ndarray:
        arr = self.tensors.get(name)
        if arr is None:
            raise CorruptCheckpoint(f"checkpoint has no tensor {name!r}")
        return arr


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    """Serialize; tensor order is the sorted name order, so equal contents
    always produce equal bytes."""
    parts = [MAGIC, struct.pack("<I", ckpt.version)]
    meta_blob = json.dumps(ckpt.meta, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta_blob)))
    parts.append(meta_blob)
    names = sorted(ckpt.tensors)
    parts.append(struct.pack("<I", len(names)))
    payloads = []
    for name in names:
        # asarray keeps 0-d ranks intact (ascontiguousarray would promote)
        arr = np.asarray(ckpt.tensors[name], dtype=np.float32)
        name_b = name.encode("utf-8")
        if len(name_b) > 0xFFFF:
            raise StorageError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise StorageError(f"tensor rank {arr.ndim} unsupported")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payloads.append(arr.astype("<f4").tobytes())
    parts.extend(payloads)
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(ckpt: Checkpoint, path) -> str:
    """Write the checkpoint; returns the hex digest of the file body."""
    blob = checkpoint_bytes(ckpt)
    with open(path, "wb") as fh:
        fh.write(blob)
    ckpt.digest = blob[-_DIGEST_SIZE:].hex()
    return ckpt.digest


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptCheckpoint(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                f"file body ends at {len(self.blob)}"
            )
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())


def parse_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < len(MAGIC) + 4 + _DIGEST_SIZE:
        raise CorruptCheckpoint(f"file too short ({len(blob)} bytes)")
    body, digest = blob[:-_DIGEST_SIZE], blob[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpoint("digest mismatch: file corrupted or truncated")
    r = _Reader(body)
    if r.read(len(MAGIC)) != MAGIC:
        raise CorruptCheckpoint("bad magic bytes: not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(
            f"checkpoint format version {version}; this build reads "
            f"{FORMAT_VERSION}"
        )
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.read(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint("unreadable checkpoint metadata") from exc
    (count,) = r.unpack("<I")
    headers: list[tuple[str, tuple[int, ...]]] = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.read(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        headers.append((name, shape))
    tensors: dict[str, np.ndarray] = {}
    for name, shape in headers:
        n_items = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = r.read(4 * n_items)
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    if r.pos != len(body):
        raise CorruptCheckpoint(f"{len(body) - r.pos} trailing bytes after payload")
    ckpt = Checkpoint(meta=meta, tensors=tensors, version=version)
    ckpt.digest = digest.hex()
    return ckpt
