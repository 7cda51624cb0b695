"""Unified token id space merging word bytes, pix tokens, and specials.

Layout for folding factor f with V = vocab_size(f):

    [0, 256)        word tokens (raw utf-8 bytes)
    [256, 256+V)    pix tokens, shifted by the fixed offset 256
    256+V           pad pix
    256+V+1         bos
    256+V+2         eos
    256+V+3         img start
    256+V+4         img end

Total size 256 + V + 5. The pix-level pad id (vocab_size(f), see
windows.pad_token_id) lands exactly on the unified pad slot under the
+256 shift, so whole window grids convert with one addition.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidTokenError
from .folding import validate_factor, vocab_size
from .windows import WindowGrid

PIX_OFFSET = 256
NUM_SPECIALS = 5


class Tag(enum.Enum):
    WORD = "word"
    PIX = "pix"
    PAD_PIX = "pad_pix"
    BOS = "bos"
    EOS = "eos"
    IMG_START = "img_start"
    IMG_END = "img_end"


_SPECIAL_ORDER = (Tag.PAD_PIX, Tag.BOS, Tag.EOS, Tag.IMG_START, Tag.IMG_END)


@dataclass(frozen=True)
class UnifiedToken:
    tag: Tag
    inner: int | None = None


def total_vocab(factor: int) -> int:
    return PIX_OFFSET + vocab_size(factor) + NUM_SPECIALS


def special_id(tag: Tag, factor: int) -> int:
    validate_factor(factor)
    return PIX_OFFSET + vocab_size(factor) + _SPECIAL_ORDER.index(tag)


def pad_pix_id(factor: int) -> int:
    return special_id(Tag.PAD_PIX, factor)


def bos_id(factor: int) -> int:
    return special_id(Tag.BOS, factor)


def eos_id(factor: int) -> int:
    return special_id(Tag.EOS, factor)


def img_start_id(factor: int) -> int:
    return special_id(Tag.IMG_START, factor)


def img_end_id(factor: int) -> int:
    return special_id(Tag.IMG_END, factor)


def to_unified(token: UnifiedToken, factor: int) -> int:
    """Map a tagged token to its slot in the unified id space."""
    validate_factor(factor)
    if token.tag is Tag.WORD:
        if token.inner is None or not 0 <= token.inner < 256:
            raise InvalidTokenError(f"word byte {token.inner!r} out of range [0, 256)")
        return token.inner
    if token.tag is Tag.PIX:
        v = vocab_size(factor)
        if token.inner is None or not 0 <= token.inner < v:
            raise InvalidTokenError(
                f"pix id {token.inner!r} out of range [0, {v}) for factor {factor}"
            )
        return PIX_OFFSET + token.inner
    if token.inner is not None:
        raise InvalidTokenError(f"special token {token.tag} carries no inner id")
    return special_id(token.tag, factor)


def from_unified(uid: int, factor: int) -> UnifiedToken:
    """Inverse of to_unified over [0, total_vocab)."""
    validate_factor(factor)
    if not 0 <= uid < total_vocab(factor):
        raise InvalidTokenError(
            f"unified id {uid} out of range [0, {total_vocab(factor)}) for factor {factor}"
        )
    if uid < PIX_OFFSET:
        return UnifiedToken(Tag.WORD, uid)
    v = vocab_size(factor)
    if uid < PIX_OFFSET + v:
        return UnifiedToken(Tag.PIX, uid - PIX_OFFSET)
    return UnifiedToken(_SPECIAL_ORDER[uid - PIX_OFFSET - v])


def encode_text(text: str | bytes) -> list[int]:
    """Byte-level word tokens; unified ids equal the byte values."""
    data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
    return list(data)


def decode_text(ids) -> bytes:
    out = bytearray()
    for i in ids:
        if not 0 <= i < PIX_OFFSET:
            raise InvalidTokenError(f"id {i} is not a word token")
        out.append(i)
    return bytes(out)


def pix_to_unified(tokens: np.ndarray, factor: int) -> np.ndarray:
    """Shift pix-level ids (pad included) into the unified space."""
    validate_factor(factor)
    tokens = np.asarray(tokens)
    if tokens.size and (tokens.min() < 0 or tokens.max() > vocab_size(factor)):
        raise InvalidTokenError(
            f"pix-level id outside [0, {vocab_size(factor)}] for factor {factor}"
        )
    return tokens + PIX_OFFSET


def unified_to_pix(ids: np.ndarray, factor: int) -> np.ndarray:
    """Inverse shift; accepts pix ids and the pad slot only."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < PIX_OFFSET or ids.max() > PIX_OFFSET + vocab_size(factor)):
        raise InvalidTokenError("id outside the unified pix/pad range")
    return ids - PIX_OFFSET


def encode_image_windows(grid: WindowGrid, factor: int) -> list[np.ndarray]:
    """Per-window unified id sequences, in window order, no delimiters."""
    return [pix_to_unified(grid.windows[k], factor) for k in range(grid.num_windows)]


def encode_image(grid: WindowGrid, factor: int) -> list[int]:
    """Flat unified encoding of an image: window sequences in order,
    wrapped in img-start / img-end markers."""
    ids = [img_start_id(factor)]
    for w in encode_image_windows(grid, factor):
        ids.extend(int(x) for x in w)
    ids.append(img_end_id(factor))
    return ids


def decode_image(ids, factor: int) -> np.ndarray:
    """Inverse of encode_image: strip the markers, un-shift the pix ids."""
    ids = list(ids)
    if len(ids) < 2 or ids[0] != img_start_id(factor) or ids[-1] != img_end_id(factor):
        raise InvalidTokenError("image encoding must be wrapped in img start/end markers")
    return unified_to_pix(np.asarray(ids[1:-1], dtype=np.int64), factor)
