"""Color folding: uniform RGB quantization mapping pixels to pix tokens.

A folding factor f (one of 2, 4, 8, 16, 32) splits each 8-bit channel
into B = 256/f half-open bins [k*f, (k+1)*f), so a color folds onto one
of B^3 token ids. Ids are laid out R-major:

    id = bin_r * B^2 + bin_g * B + bin_b

Unfolding returns the bin-midpoint color (bin*f + f/2), which folds back
to the same id, so the token round trip is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyImageError, InvalidFactorError, InvalidTokenError

VALID_FACTORS = (2, 4, 8, 16, 32)


def validate_factor(factor: int) -> int:
    """Return the factor unchanged, or raise InvalidFactorError."""
    if factor not in VALID_FACTORS:
        raise InvalidFactorError(
            f"invalid folding factor {factor!r}: valid factors are "
            f"{{{', '.join(str(f) for f in VALID_FACTORS)}}}"
        )
    return factor


def bins_per_channel(factor: int) -> int:
    validate_factor(factor)
    return 256 // factor


def vocab_size(factor: int) -> int:
    """Number of distinct pix tokens under the given factor: (256/f)^3."""
    return bins_per_channel(factor) ** 3


def fold_pixel(rgb: tuple[int, int, int], factor: int) -> int:
    """Fold one RGB triple (channels 0-255) to its pix token id."""
    validate_factor(factor)
    r, g, b = rgb
    for c in (r, g, b):
        if not 0 <= c <= 255:
            raise ValueError(f"channel value {c} outside [0, 255]")
    n = bins_per_channel(factor)
    return (r // factor) * n * n + (g // factor) * n + (b // factor)


def unfold_token(token: int, factor: int) -> tuple[int, int, int]:
    """Invert fold_pixel up to quantization: the bin-midpoint color."""
    validate_factor(factor)
    if not 0 <= token < vocab_size(factor):
        raise InvalidTokenError(
            f"pix token {token} out of range [0, {vocab_size(factor)}) for factor {factor}"
        )
    n = bins_per_channel(factor)
    half = factor // 2
    r_bin, rem = divmod(token, n * n)
    g_bin, b_bin = divmod(rem, n)
    return (r_bin * factor + half, g_bin * factor + half, b_bin * factor + half)


@dataclass(frozen=True, eq=False)
class FoldedImage:
    """Row-major grid of pix tokens plus the factor that produced them.

    tokens has length width*height; index y*width + x holds pixel (x, y).
    Padded images additionally contain the reserved pad id equal to
    vocab_size(factor) in their margin cells.
    """

    width: int
    height: int
    factor: int
    tokens: np.ndarray

    def __post_init__(self):
        validate_factor(self.factor)
        if self.width < 1 or self.height < 1:
            raise EmptyImageError(
                f"image dimensions must be >= 1, got {self.width}x{self.height}"
            )
        if self.tokens.shape != (self.width * self.height,):
            raise ValueError(
                f"token grid has shape {self.tokens.shape}, "
                f"expected ({self.width * self.height},)"
            )

    def grid(self) -> np.ndarray:
        """Tokens as a (height, width) array."""
        return self.tokens.reshape(self.height, self.width)

    def same_as(self, other: "FoldedImage") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and self.factor == other.factor
            and np.array_equal(self.tokens, other.tokens)
        )


def _as_rgb_array(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)  # grayscale replicated to RGB
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) or (H, W) image, got shape {arr.shape}")
    if arr.size == 0:
        raise EmptyImageError("image has a zero dimension")
    arr = arr.astype(np.int64, copy=False)
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError("channel values outside [0, 255]")
    return arr


def fold_image(img: np.ndarray, factor: int) -> FoldedImage:
    """Fold every pixel of an (H, W, 3) uint8 raster, preserving order."""
    validate_factor(factor)
    arr = _as_rgb_array(img)
    n = bins_per_channel(factor)
    bins = arr // factor
    ids = (bins[..., 0] * n + bins[..., 1]) * n + bins[..., 2]
    h, w = arr.shape[:2]
    return FoldedImage(width=w, height=h, factor=factor, tokens=ids.reshape(-1))


def unfold_image(fi: FoldedImage) -> np.ndarray:
    """Reconstruct an (H, W, 3) uint8 raster of bin-midpoint colors."""
    v = vocab_size(fi.factor)
    if fi.tokens.min() < 0 or fi.tokens.max() >= v:
        bad = fi.tokens[(fi.tokens < 0) | (fi.tokens >= v)][0]
        raise InvalidTokenError(
            f"pix token {int(bad)} out of range [0, {v}) for factor {fi.factor}"
        )
    n = bins_per_channel(fi.factor)
    half = fi.factor // 2
    t = fi.tokens.reshape(fi.height, fi.width)
    channels = np.stack([t // (n * n), (t // n) % n, t % n], axis=-1)
    return (channels * fi.factor + half).astype(np.uint8)
