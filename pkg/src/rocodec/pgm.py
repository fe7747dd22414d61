"""Binary PGM (P5) reader and writer, 8-bit only.

Header parsing follows the netpbm convention: tokens separated by
whitespace, '#' comments running to end of line, and exactly one
whitespace byte between the maxval and the raster.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError

__all__ = ["read_pgm", "write_pgm"]


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise FormatError("unexpected end of PGM header", offset=pos)
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM into a uint8 array of shape (height, width)."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5)", offset=0)
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _next_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError as exc:
            raise FormatError(f"{path}: bad header token {token!r}",
                              offset=pos) from exc
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad dimensions {width}x{height}", offset=pos)
    if not (0 < maxval <= 255):
        raise FormatError(
            f"{path}: only 8-bit PGM supported, maxval {maxval}", offset=pos
        )
    pos += 1  # single whitespace byte before the raster
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise FormatError(
            f"{path}: raster truncated ({len(raster)} of {width * height} bytes)",
            offset=len(data),
        )
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, image: np.ndarray) -> None:
    """Write a uint8 array as binary PGM with maxval 255."""
    a = np.asarray(image)
    if a.ndim != 2:
        raise FormatError(f"image must be 2-D, got shape {a.shape}")
    if a.dtype != np.uint8:
        raise FormatError(f"image must be uint8, got {a.dtype}")
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + a.tobytes())
