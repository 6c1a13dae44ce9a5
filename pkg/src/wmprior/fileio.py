"""Portable file formats: FLD1 nodal fields, PGM renders, data CSV.

FLD1 layout: 16-byte header (magic "FLD1", uint32 nx, uint32 ny, uint32
flags = 0, little-endian) followed by nx*ny float64 nodal values in
row-major order (j outer, i inner).  Round-trips are bitwise exact.
"""

from __future__ import annotations

import csv
import struct

import numpy as np

from .errors import FileFormatError
from .grid import Field, Grid

__all__ = ["save_field", "load_field", "render_pgm", "save_data_csv", "load_data_csv"]

MAGIC = b"FLD1"
_HEADER = struct.Struct("<4sIII")


def save_field(path, f: Field):
    values = np.ascontiguousarray(f.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, f.grid.nx, f.grid.ny, 0))
        fh.write(values.tobytes())


def load_field(path) -> Field:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise FileFormatError(f"{path}: truncated header ({len(head)} bytes)")
        magic, nx, ny, flags = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FileFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        if flags != 0:
            raise FileFormatError(f"{path}: unsupported flags {flags}")
        payload = fh.read()
    expected = 8 * nx * ny
    if len(payload) != expected:
        raise FileFormatError(f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    values = np.frombuffer(payload, dtype="<f8").astype(float)
    return Field(values, Grid(int(nx), int(ny)))


def render_pgm(f: Field, path):
    """8-bit binary PGM, min-max normalized; constant fields map to gray 128."""
    values = f.reshape()
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        nodes = [f"({i},{j})" for j, i in bad[:8]]
        raise FileFormatError(f"field has non-finite values at nodes {', '.join(nodes)}"
                              + (" ..." if bad.shape[0] > 8 else ""))
    lo, hi = values.min(), values.max()
    if hi > lo:
        img = np.rint((values - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        img = np.full_like(values, 128, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{f.grid.nx} {f.grid.ny}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def save_data_csv(path, values: np.ndarray, variances: np.ndarray):
    """Measurement CSV with columns index, value, variance."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "value", "variance"])
        for i, (v, s) in enumerate(zip(values, np.broadcast_to(variances, values.shape))):
            w.writerow([i, repr(float(v)), repr(float(s))])


def load_data_csv(path):
    """Returns (values, variances); malformed rows report their line number."""
    values, variances = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for ln, row in enumerate(reader, start=1):
            if ln == 1 and row and row[0].strip().lower() == "index":
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise FileFormatError(f"{path}:{ln}: expected 3 columns, got {len(row)}")
            try:
                idx, val, var = int(row[0]), float(row[1]), float(row[2])
            except ValueError as exc:
                raise FileFormatError(f"{path}:{ln}: {exc}") from exc
            if idx != len(values):
                raise FileFormatError(f"{path}:{ln}: indices must be consecutive from 0, got {idx}")
            values.append(val)
            variances.append(var)
    if not values:
        raise FileFormatError(f"{path}: no data rows")
    return np.array(values), np.array(variances)
