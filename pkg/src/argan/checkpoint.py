"""Binary checkpoint archive.

Layout (all integers little-endian u32)::

    b"ARGN" | version | config_len | config text (utf-8, key = value lines)
    | tensor_count | tensor_count x (name_len | name | ndim | dims... | f32 payload)
"""

from __future__ import annotations

import os
import struct
from collections import OrderedDict

import numpy as np

from .config import ArganConfig

MAGIC = b"ARGN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(config: ArganConfig, tensors: "OrderedDict[str, np.ndarray]") -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = config.to_text().encode("utf-8")
    parts += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape),
                  np.ascontiguousarray(arr, dtype="<f4").tobytes()]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes for {what} at offset {self.pos}, "
                                  f"file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def decode_checkpoint(buf: bytes) -> tuple[ArganConfig, "OrderedDict[str, np.ndarray]"]:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at offset 4")
    cfg_text = r.take(r.u32("config length"), "config").decode("utf-8")
    config = ArganConfig.from_text(cfg_text)
    tensors = OrderedDict()
    for _ in range(r.u32("tensor count")):
        name = r.take(r.u32("name length"), "tensor name").decode("utf-8")
        ndim = r.u32(f"ndim of {name}")
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"dims of {name}"))
        n = int(np.prod(dims, dtype=np.int64))
        payload = r.take(4 * n, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes at offset {r.pos}")
    return config, tensors


def save_checkpoint(path: str | os.PathLike, config: ArganConfig,
                    tensors: "OrderedDict[str, np.ndarray]") -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(encode_checkpoint(config, tensors))
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> tuple[ArganConfig, "OrderedDict[str, np.ndarray]"]:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def assign(target: np.ndarray, source: np.ndarray, name: str) -> np.ndarray:
    """Shape-checked copy of a loaded tensor."""
    if target.shape != source.shape:
        raise CheckpointError(f"tensor {name}: checkpoint shape {source.shape} "
                              f"does not match model shape {target.shape}")
    return source.astype(target.dtype).copy()
