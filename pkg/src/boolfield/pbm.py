"""Portable bitmap (PBM) reading and writing, P1 and P4.

Pixel value 1 is black, matching the field convention. P4 rows are padded
to whole bytes, most significant bit first.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import PBMParseError, UsageError

MAX_DIM = 1 << 20
_WS = b" \t\n\r\v\f"


class _Scanner:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def skip_space(self):
        d = self.data
        while self.pos < len(d):
            c = d[self.pos:self.pos + 1]
            if c == b"#":
                nl = d.find(b"\n", self.pos)
                self.pos = len(d) if nl < 0 else nl + 1
            elif c in _WS:
                self.pos += 1
            else:
                break

    def integer(self, what):
        self.skip_space()
        start = self.pos
        while self.pos < len(self.data) and self.data[self.pos:self.pos + 1].isdigit():
            self.pos += 1
        if start == self.pos:
            raise PBMParseError(f"expected {what}", start)
        value = int(self.data[start:self.pos])
        if not 0 < value <= MAX_DIM:
            raise PBMParseError(f"{what} {value} outside [1, {MAX_DIM}]", start)
        return value


def parse_pbm(data: bytes) -> np.ndarray:
    """Decode PBM bytes into an (H, W) uint8 array."""
    if data[:2] not in (b"P1", b"P4"):
        raise PBMParseError("missing P1/P4 magic number", 0)
    binary = data[:2] == b"P4"
    sc = _Scanner(data)
    sc.pos = 2
    if sc.pos < len(data) and data[sc.pos:sc.pos + 1] not in _WS + b"#":
        raise PBMParseError("magic number must be followed by whitespace", 2)
    width = sc.integer("width")
    height = sc.integer("height")
    if binary:
        if sc.pos >= len(data) or data[sc.pos:sc.pos + 1] not in _WS:
            raise PBMParseError("expected a single whitespace byte before raster", sc.pos)
        start = sc.pos + 1
        row_bytes = -(-width // 8)
        need = row_bytes * height
        raw = np.frombuffer(data, dtype=np.uint8, count=min(need, len(data) - start), offset=start)
        if len(raw) < need:
            raise PBMParseError(f"truncated raster: {need} bytes expected, {len(raw)} present",
                                len(data))
        bits = np.unpackbits(raw.reshape(height, row_bytes), axis=1)
        return np.ascontiguousarray(bits[:, :width])
    out = np.empty(width * height, dtype=np.uint8)
    for i in range(width * height):
        sc.skip_space()
        if sc.pos >= len(data):
            raise PBMParseError(f"truncated raster: {width * height} pixels expected, {i} read",
                                sc.pos)
        c = data[sc.pos:sc.pos + 1]
        if c not in (b"0", b"1"):
            raise PBMParseError(f"invalid pixel character {c!r}", sc.pos)
        out[i] = c == b"1"
        sc.pos += 1
    return out.reshape(height, width)


def read_pbm(path) -> np.ndarray:
    return parse_pbm(Path(path).read_bytes())


def _as_bitmap(field):
    f = np.asarray(field)
    if f.ndim == 3:
        if f.shape[-1] != 1:
            raise UsageError(f"PBM holds 1-bit fields; got m={f.shape[-1]}")
        f = f[..., 0]
    if f.ndim != 2 or 0 in f.shape:
        raise UsageError(f"expected a nonempty (H, W) field, got shape {f.shape}")
    if np.issubdtype(f.dtype, np.floating) or (f.size and (f.min() < 0 or f.max() > 1)):
        raise UsageError("PBM fields must be hard bits")
    return f.astype(np.uint8)


def format_pbm(field, binary=True) -> bytes:
    f = _as_bitmap(field)
    h, w = f.shape
    if binary:
        return f"P4\n{w} {h}\n".encode() + np.packbits(f, axis=1).tobytes()
    rows = [" ".join(map(str, row)) for row in f]
    return (f"P1\n{w} {h}\n" + "\n".join(rows) + "\n").encode()


def write_pbm(field, path, binary=True):
    Path(path).write_bytes(format_pbm(field, binary))


def write_frames(fields, directory, binary=True, prefix="frame"):
    """Write ``prefix_000.pbm``, ``prefix_001.pbm``, ...; returns the paths.

    Every frame is validated before anything is written.
    """
    frames = [_as_bitmap(f) for f in fields]
    if frames and len({f.shape for f in frames}) > 1:
        raise UsageError("frames differ in size")
    directory = Path(directory)
    if frames:
        os.makedirs(directory, exist_ok=True)
    digits = max(3, len(str(len(frames) - 1)))
    paths = []
    for i, f in enumerate(frames):
        p = directory / f"{prefix}_{i:0{digits}d}.pbm"
        write_pbm(f, p, binary)
        paths.append(p)
    return paths
