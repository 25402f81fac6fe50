"""Depth map serialization: a float map container plus a text sidecar.

The map file is a portable-float-map style container widened to 64 bits:

    line 1: ``Pf64``            magic
    line 2: ``<width> <height>``
    line 3: ``<scale>``         sign marks endianness, negative = little
    payload: height * width float64 values, row major, top row first

Invalid pixels are stored as ``+inf``; the sidecar (``<path>.meta``, an
INI file) records the camera intrinsics, the far clip, and the validity
encoding so the map alone never has to be interpreted blind. Payload
bytes are written exactly as held in memory, so save followed by load is
bit-identical. Parse failures raise :class:`ParseError` carrying the byte
offset at which the container stopped making sense.
"""

from __future__ import annotations

import configparser
import io
from pathlib import Path

import numpy as np

from .errors import ParseError
from .scenes import CameraIntrinsics, DepthMap, INVALID_DEPTH

_MAGIC = b"Pf64"
SIDECAR_SUFFIX = ".meta"


def sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + SIDECAR_SUFFIX)


def save_depth_file(dm: DepthMap, path: str | Path) -> None:
    path = Path(path)
    stored = np.where(dm.valid, dm.depth, INVALID_DEPTH)
    with open(path, "wb") as f:
        f.write(_MAGIC + b"\n")
        f.write(f"{dm.intrinsics.width} {dm.intrinsics.height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(stored.astype("<f8").tobytes())

    meta = configparser.ConfigParser()
    meta["intrinsics"] = {
        "fx": repr(dm.intrinsics.fx),
        "fy": repr(dm.intrinsics.fy),
        "cx": repr(dm.intrinsics.cx),
        "cy": repr(dm.intrinsics.cy),
        "width": str(dm.intrinsics.width),
        "height": str(dm.intrinsics.height),
    }
    meta["depth"] = {"far_clip": repr(dm.far_clip), "validity": "nonfinite"}
    with open(sidecar_path(path), "w", encoding="ascii") as f:
        meta.write(f)


def _read_line(f: io.BufferedReader, what: str) -> bytes:
    start = f.tell()
    line = f.readline(128)
    if not line.endswith(b"\n"):
        raise ParseError(f"truncated {what} at byte offset {start}", location=start)
    return line[:-1]


def load_depth_file(path: str | Path) -> DepthMap:
    path = Path(path)
    with open(path, "rb") as f:
        magic = _read_line(f, "magic line")
        if magic != _MAGIC:
            raise ParseError(f"bad magic {magic!r} at byte offset 0, expected {_MAGIC!r}",
                             location=0)
        dims_at = f.tell()
        dims = _read_line(f, "dimension line")
        parts = dims.split()
        if len(parts) != 2 or not all(p.isdigit() for p in parts):
            raise ParseError(f"bad dimension line {dims!r} at byte offset {dims_at}",
                             location=dims_at)
        width, height = int(parts[0]), int(parts[1])
        scale_at = f.tell()
        scale_line = _read_line(f, "scale line")
        try:
            scale = float(scale_line)
        except ValueError:
            raise ParseError(f"bad scale line {scale_line!r} at byte offset {scale_at}",
                             location=scale_at) from None
        if scale >= 0.0:
            raise ParseError(
                f"big-endian payloads are not supported (scale {scale} at byte offset {scale_at})",
                location=scale_at)
        payload_at = f.tell()
        need = width * height * 8
        payload = f.read(need)
        if len(payload) != need:
            stop = payload_at + len(payload)
            raise ParseError(
                f"payload truncated at byte offset {stop}, expected {need} bytes from {payload_at}",
                location=stop)
        extra = f.read(1)
        if extra:
            raise ParseError(f"trailing data at byte offset {payload_at + need}",
                             location=payload_at + need)
    depth = np.frombuffer(payload, dtype="<f8").reshape(height, width).astype(np.float64)

    sc = sidecar_path(path)
    if not sc.exists():
        raise ParseError(f"missing sidecar {sc}")
    meta = configparser.ConfigParser()
    try:
        with open(sc, encoding="ascii") as f:
            meta.read_file(f)
    except configparser.Error as e:
        line = getattr(e, "lineno", None)
        raise ParseError(f"malformed sidecar {sc}: {e}", location=line) from None
    try:
        sc_width = int(meta["intrinsics"]["width"])
        sc_height = int(meta["intrinsics"]["height"])
        if (sc_width, sc_height) != (width, height):
            raise ParseError(
                f"sidecar dimensions {sc_width}x{sc_height} disagree with map {width}x{height}")
        intr = CameraIntrinsics(
            fx=float(meta["intrinsics"]["fx"]),
            fy=float(meta["intrinsics"]["fy"]),
            cx=float(meta["intrinsics"]["cx"]),
            cy=float(meta["intrinsics"]["cy"]),
            width=sc_width,
            height=sc_height,
        )
        far_clip = float(meta["depth"]["far_clip"])
        validity = meta["depth"]["validity"]
    except (KeyError, ValueError) as e:
        raise ParseError(f"sidecar {sc} missing or malformed field: {e}") from None
    if validity != "nonfinite":
        raise ParseError(f"unknown validity encoding {validity!r} in {sc}")
    valid = np.isfinite(depth)
    return DepthMap(intrinsics=intr, depth=np.where(valid, depth, INVALID_DEPTH),
                    valid=valid, far_clip=far_clip)
