"""Mixed text+image training container.

Wire layout, little-endian throughout, no compression:

    header   magic 8 bytes b"UPWMIX1\\0", u32 version (1), u64 record count
    record   u8 tag: 0 = text, 1 = image
      text   u64 payload length, then that many utf-8 bytes
      image  u32 width, u32 height, then 3*width*height raw RGB bytes

A file must decode to exactly the declared record count with zero
trailing bytes. Malformed inputs map to distinct errors: wrong magic or
version or trailing bytes -> FormatError; a stream that ends inside a
declared field or text payload -> TruncationError (with byte offset);
text that is not valid utf-8 -> EncodingError; impossible image
dimensions (zero, or larger than the remaining container could hold)
-> CorruptionError.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from .errors import CorruptionError, EncodingError, FormatError, TruncationError

MAGIC = b"UPWMIX1\0"
VERSION = 1
TAG_TEXT = 0
TAG_IMAGE = 1


@dataclass(frozen=True, eq=False)
class TextRecord:
    text: str

    def __eq__(self, other):
        return isinstance(other, TextRecord) and self.text == other.text


@dataclass(frozen=True, eq=False)
class ImageRecord:
    width: int
    height: int
    rgb: bytes  # 3 * width * height raw bytes, row-major

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dims must be >= 1, got {self.width}x{self.height}")
        if len(self.rgb) != 3 * self.width * self.height:
            raise ValueError(
                f"rgb payload has {len(self.rgb)} bytes, expected "
                f"{3 * self.width * self.height}"
            )

    def __eq__(self, other):
        return (
            isinstance(other, ImageRecord)
            and self.width == other.width
            and self.height == other.height
            and self.rgb == other.rgb
        )

    def array(self) -> np.ndarray:
        return (
            np.frombuffer(self.rgb, dtype=np.uint8)
            .reshape(self.height, self.width, 3)
            .copy()
        )

    @classmethod
    def from_array(cls, rgb: np.ndarray) -> "ImageRecord":
        arr = np.asarray(rgb, dtype=np.uint8)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got shape {arr.shape}")
        return cls(width=arr.shape[1], height=arr.shape[0], rgb=arr.tobytes(order="C"))


MixedRecord = TextRecord | ImageRecord


def write_mixed(records: Iterable[MixedRecord]) -> bytes:
    records = list(records)
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    out += struct.pack("<Q", len(records))
    for rec in records:
        if isinstance(rec, TextRecord):
            payload = rec.text.encode("utf-8")
            out += struct.pack("<B", TAG_TEXT)
            out += struct.pack("<Q", len(payload))
            out += payload
        elif isinstance(rec, ImageRecord):
            out += struct.pack("<B", TAG_IMAGE)
            out += struct.pack("<II", rec.width, rec.height)
            out += rec.rgb
        else:
            raise TypeError(f"not a mixed record: {rec!r}")
    return bytes(out)


def write_mixed_file(path: str | Path, records: Iterable[MixedRecord]) -> None:
    Path(path).write_bytes(write_mixed(records))


class _StreamReader:
    """Tracks the byte offset so truncation errors can report it."""

    def __init__(self, stream: BinaryIO, total: int | None):
        self.stream = stream
        self.offset = 0
        self.total = total  # container size when known, for dim sanity checks

    def take(self, n: int, what: str) -> bytes:
        chunk = self.stream.read(n)
        self.offset += len(chunk)
        if len(chunk) < n:
            raise TruncationError(f"stream ended inside {what}", self.offset)
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _read_header(r: _StreamReader) -> int:
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}, expected {VERSION}")
    (count,) = r.unpack("<Q", "record count")
    return count


def _read_record(r: _StreamReader) -> MixedRecord:
    (tag,) = r.unpack("<B", "record tag")
    if tag == TAG_TEXT:
        (length,) = r.unpack("<Q", "text length")
        payload = r.take(length, "text payload")
        try:
            return TextRecord(payload.decode("utf-8"))
        except UnicodeDecodeError as e:
            raise EncodingError(f"text payload is not valid utf-8: {e}") from None
    if tag == TAG_IMAGE:
        width, height = r.unpack("<II", "image dimensions")
        if width < 1 or height < 1:
            raise CorruptionError(f"image dims must be >= 1, got {width}x{height}")
        need = 3 * width * height
        if r.total is not None and r.offset + need > r.total:
            raise CorruptionError(
                f"image dims {width}x{height} declare {need} payload bytes but only "
                f"{r.total - r.offset} remain in the container"
            )
        payload = r.take(need, "image payload")
        return ImageRecord(width=width, height=height, rgb=payload)
    raise FormatError(f"unknown record tag {tag}")


def iterate_mixed(stream: BinaryIO, total: int | None = None) -> Iterator[MixedRecord]:
    """Stream records one at a time with constant memory per record."""
    r = _StreamReader(stream, total)
    count = _read_header(r)
    for _ in range(count):
        yield _read_record(r)
    trailing = stream.read(1)
    if trailing:
        raise FormatError(f"trailing bytes after record {count}")


def read_mixed(data: bytes) -> list[MixedRecord]:
    return list(iterate_mixed(io.BytesIO(data), total=len(data)))


def read_mixed_file(path: str | Path) -> list[MixedRecord]:
    return read_mixed(Path(path).read_bytes())


def iterate_mixed_file(path: str | Path) -> Iterator[MixedRecord]:
    size = Path(path).stat().st_size
    with open(path, "rb") as fh:
        yield from iterate_mixed(fh, total=size)
