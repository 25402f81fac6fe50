"""Binary checkpoint container with exact float64 round trips.

Layout, all integers little-endian:

    bytes 0..3   magic ``DGCP``
    uint32       format version (currently 1)
    uint64       training step
    uint64       config length, then that many bytes of UTF-8 INI text
    uint64       tensor count, then per tensor:
        uint64   name length, then UTF-8 name
        uint32   ndim, then ndim uint64 dims
        raw      C-order float64 payload

Tensors are stored in the order given and read back into an ordered dict,
so a save/load cycle preserves both bytes and iteration order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ShapeError

MAGIC = b"DGCP"
VERSION = 1


@dataclass
class CheckpointData:
    step: int
    config_text: str
    tensors: dict[str, np.ndarray]


def _tensor_data(t) -> np.ndarray:
    data = getattr(t, "data", t)
    arr = np.asarray(data, dtype=np.float64)
    if not arr.flags["C_CONTIGUOUS"]:  # ascontiguousarray would promote 0-d to 1-d
        arr = np.ascontiguousarray(arr)
    return arr


def save_checkpoint(path: str | Path, step: int, config_text: str,
                    named_tensors) -> None:
    """``named_tensors`` is an iterable of (name, Tensor-or-ndarray)."""
    items = [(name, _tensor_data(t)) for name, t in named_tensors]
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        raise ShapeError("duplicate tensor names in checkpoint")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<Q", int(step))
    cfg_bytes = config_text.encode("utf-8")
    blob += struct.pack("<Q", len(cfg_bytes))
    blob += cfg_bytes
    blob += struct.pack("<Q", len(items))
    for name, arr in items:
        nb = name.encode("utf-8")
        blob += struct.pack("<Q", len(nb))
        blob += nb
        blob += struct.pack("<I", arr.ndim)
        for d in arr.shape:
            blob += struct.pack("<Q", d)
        blob += arr.astype("<f8", copy=False).tobytes()
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    tmp = p.with_suffix(p.suffix + ".tmp")
    tmp.write_bytes(bytes(blob))
    tmp.replace(p)


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise ParseError(f"{self.path}: truncated while reading {what}",
                             location=self.pos)
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]


def load_checkpoint(path: str | Path) -> CheckpointData:
    p = Path(path)
    if not p.exists():
        raise ParseError(f"checkpoint not found: {p}")
    r = _Reader(p.read_bytes(), p)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise ParseError(f"{p}: bad magic {magic!r}", location=0)
    version = r.u32("version")
    if version != VERSION:
        raise ParseError(f"{p}: unsupported version {version}", location=4)
    step = r.u64("step")
    cfg_len = r.u64("config length")
    config_text = r.take(cfg_len, "config text").decode("utf-8")
    count = r.u64("tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        name_len = r.u64(f"tensor {i} name length")
        name = r.take(name_len, f"tensor {i} name").decode("utf-8")
        if name in tensors:
            raise ParseError(f"{p}: duplicate tensor name {name!r}", location=r.pos)
        ndim = r.u32(f"tensor {name} ndim")
        if ndim > 8:
            raise ParseError(f"{p}: implausible ndim {ndim} for {name!r}",
                             location=r.pos - 4)
        dims = tuple(r.u64(f"tensor {name} dim {d}") for d in range(ndim))
        n_elem = 1
        for d in dims:
            n_elem *= d
        raw = r.take(8 * n_elem, f"tensor {name} payload")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
    if r.pos != len(r.blob):
        raise ParseError(f"{p}: {len(r.blob) - r.pos} trailing bytes", location=r.pos)
    return CheckpointData(step=step, config_text=config_text, tensors=tensors)


def restore_into(named_params, tensors: dict[str, np.ndarray]) -> None:
    """Copy stored arrays into live parameters, matching names exactly.

    ``named_params`` is an iterable of (name, Tensor). Missing or extra
    names are an error: a checkpoint either matches the model or it does
    not restore at all.
    """
    live = dict(named_params)
    missing = sorted(set(live) - set(tensors))
    extra = sorted(set(tensors) - set(live))
    if missing or extra:
        raise ShapeError(f"checkpoint does not match model: missing={missing[:5]} "
                         f"extra={extra[:5]}")
    for name, tensor in live.items():
        arr = tensors[name]
        if arr.shape != tensor.data.shape:
            raise ShapeError(f"checkpoint tensor {name!r} has shape {arr.shape}, "
                             f"model expects {tensor.data.shape}")
        np.copyto(tensor.data, arr)
