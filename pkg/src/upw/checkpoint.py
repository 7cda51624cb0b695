"""Self-describing binary model checkpoint.

Layout (little-endian):

    magic   8 bytes  b"UPWCKPT1"
    u32     length of the config text block
    bytes   config block: sorted "key=value" lines, utf-8
    u32     parameter count
    then per parameter, sorted by name:
    u16     name length, followed by the utf-8 name
    u8      rank, followed by rank u64 dimensions
    bytes   row-major float64 values

The config block carries the nine model fields plus max_global_len so a
checkpoint reconstructs its model without outside information.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, TruncationError
from .model import ModelConfig, UnifiedPixWordModel

MAGIC = b"UPWCKPT1"


def _config_block(model: UnifiedPixWordModel) -> bytes:
    items = {f: getattr(model.cfg, f) for f in (
        "dim", "layers", "heads", "kv_heads", "image_dim", "image_layers",
        "fold_factor", "image_size", "window_size",
    )}
    items["max_global_len"] = model.max_global_len
    lines = [f"{k}={items[k]}" for k in sorted(items)]
    return ("\n".join(lines) + "\n").encode("utf-8")


def checkpoint_bytes(model: UnifiedPixWordModel) -> bytes:
    out = bytearray(MAGIC)
    cfg_block = _config_block(model)
    out += struct.pack("<I", len(cfg_block))
    out += cfg_block
    names = sorted(model.params)
    out += struct.pack("<I", len(names))
    for name in names:
        data = model.params[name].data
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<B", data.ndim)
        for d in data.shape:
            out += struct.pack("<Q", d)
        out += data.astype("<f8", copy=False).tobytes(order="C")
    return bytes(out)


def save_checkpoint(path: str | Path, model: UnifiedPixWordModel) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncationError(f"checkpoint ended inside {what}", len(self.data))
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))[0]


def load_checkpoint_bytes(data: bytes) -> UnifiedPixWordModel:
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError(f"bad checkpoint magic, expected {MAGIC!r}")
    cfg_len = r.unpack("<I", "config length")
    try:
        text = r.take(cfg_len, "config block").decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"config block is not valid utf-8: {e}") from None
    kv: dict[str, int] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"malformed config line {line!r}")
        try:
            kv[key.strip()] = int(value.strip())
        except ValueError:
            raise FormatError(f"non-integer config value in line {line!r}") from None
    try:
        max_global_len = kv.pop("max_global_len")
        cfg = ModelConfig(**kv)
    except (KeyError, TypeError) as e:
        raise FormatError(f"config block incomplete or has unknown keys: {e}") from None

    model = UnifiedPixWordModel(cfg, rng=0, max_global_len=max_global_len)
    count = r.unpack("<I", "parameter count")
    seen = set()
    for _ in range(count):
        name_len = r.unpack("<H", "parameter name length")
        name = r.take(name_len, "parameter name").decode("utf-8")
        ndim = r.unpack("<B", "parameter rank")
        shape = tuple(r.unpack("<Q", "parameter dimension") for _ in range(ndim))
        n = int(np.prod(shape)) if shape else 1
        raw = r.take(8 * n, f"values of {name}")
        if name not in model.params:
            raise FormatError(f"unknown parameter {name!r} in checkpoint")
        if model.params[name].data.shape != shape:
            raise FormatError(
                f"parameter {name!r} has shape {shape}, expected "
                f"{model.params[name].data.shape}"
            )
        model.params[name].data = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        seen.add(name)
    missing = set(model.params) - seen
    if missing:
        raise FormatError(f"checkpoint missing parameters: {sorted(missing)[:3]}...")
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last parameter")
    return model


def load_checkpoint(path: str | Path) -> UnifiedPixWordModel:
    return load_checkpoint_bytes(Path(path).read_bytes())
