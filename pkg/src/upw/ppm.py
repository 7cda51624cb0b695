"""Binary PPM (P6, maxval 255) reader and writer, dependency-free."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError, TruncationError


def ppm_bytes(rgb: np.ndarray) -> bytes:
    """Serialize an (H, W, 3) uint8 array as a P6 PPM."""
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) array, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.min() < 0 or arr.max() > 255:
            raise ValueError("channel values outside [0, 255]")
        arr = arr.astype(np.uint8)
    h, w = arr.shape[:2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + arr.tobytes(order="C")


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    Path(path).write_bytes(ppm_bytes(rgb))


def _next_header_token(data: bytes, pos: int) -> tuple[bytes, int]:
    # Skip whitespace and '#' comment lines between header fields.
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise TruncationError("PPM header ended early", pos)
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    return data[start:pos], pos


def parse_ppm(data: bytes) -> np.ndarray:
    """Decode P6 bytes into an (H, W, 3) uint8 array."""
    magic, pos = _next_header_token(data, 0)
    if magic != b"P6":
        raise FormatError(f"not a binary PPM: magic {magic!r}, expected b'P6'")
    fields = []
    for name in ("width", "height", "maxval"):
        tok, pos = _next_header_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise FormatError(f"PPM {name} field {tok!r} is not an integer") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"PPM dimensions must be >= 1, got {width}x{height}")
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    pos += 1  # exactly one whitespace byte before the raster
    need = width * height * 3
    raster = data[pos : pos + need]
    if len(raster) < need:
        raise TruncationError(
            f"PPM raster needs {need} bytes, found {len(raster)}", pos + len(raster)
        )
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()


def read_ppm(path: str | Path) -> np.ndarray:
    return parse_ppm(Path(path).read_bytes())
