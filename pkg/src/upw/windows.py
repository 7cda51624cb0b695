"""Lossless window partitioning of folded images.

An image is padded on the right and bottom with a reserved pad token
(id == vocab_size(factor), the first id past the pix range) until both
dimensions divide the window size, then cut into non-overlapping
window_size x window_size blocks. Windows are ordered row-major across
the image and row-major within each window; sub-windows re-chunk one
window the same way at a finer size. Every step is exactly invertible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, CorruptionError, EmptyImageError
from .folding import FoldedImage, validate_factor, vocab_size


def pad_token_id(factor: int) -> int:
    """Reserved margin-fill id: first id past the pix range."""
    return vocab_size(factor)


@dataclass(frozen=True)
class PadSpec:
    window_size: int
    pad_token_id: int

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError(f"window_size must be >= 1, got {self.window_size}")

    @classmethod
    def for_factor(cls, factor: int, window_size: int) -> "PadSpec":
        validate_factor(factor)
        return cls(window_size=window_size, pad_token_id=pad_token_id(factor))


@dataclass(eq=False)
class WindowGrid:
    """Raster-ordered windows of a (padded) folded image.

    windows has shape (windows_y * windows_x, window_size**2); row k is
    the row-major pixel sequence of the k-th window in row-major window
    order. orig_width/orig_height are the pre-pad dimensions; factor and
    pad_token_id travel along so the grid can be inverted on its own.
    """

    windows_x: int
    windows_y: int
    window_size: int
    windows: np.ndarray
    orig_width: int
    orig_height: int
    factor: int
    pad_token_id: int = field(default=-1)

    def __post_init__(self):
        if self.pad_token_id < 0:
            self.pad_token_id = pad_token_id(self.factor)
        n = self.windows_x * self.windows_y
        if self.windows.shape != (n, self.window_size**2):
            raise ValueError(
                f"windows shape {self.windows.shape} does not match "
                f"{n} windows of {self.window_size ** 2} tokens"
            )
        if n:  # degenerate empty grids are constructible, unpartition rejects them
            if self.windows_x * self.window_size < self.orig_width:
                raise ValueError("windows_x too small to cover original width")
            if self.windows_y * self.window_size < self.orig_height:
                raise ValueError("windows_y too small to cover original height")

    @property
    def num_windows(self) -> int:
        return self.windows_x * self.windows_y


def pad_image(fi: FoldedImage, spec: PadSpec) -> FoldedImage:
    """Round dimensions up to multiples of window_size, filling the new
    right/bottom cells with the pad token. Original tokens stay put."""
    ws = spec.window_size
    new_w = math.ceil(fi.width / ws) * ws
    new_h = math.ceil(fi.height / ws) * ws
    if (new_w, new_h) == (fi.width, fi.height):
        return fi
    grid = np.full((new_h, new_w), spec.pad_token_id, dtype=fi.tokens.dtype)
    grid[: fi.height, : fi.width] = fi.grid()
    return FoldedImage(width=new_w, height=new_h, factor=fi.factor, tokens=grid.reshape(-1))


def partition(fi: FoldedImage, window_size: int) -> WindowGrid:
    """Cut an aligned image into non-overlapping windows.

    Requires both dimensions to be multiples of window_size; call
    pad_image first otherwise. orig dimensions are taken from fi, so
    feed the pre-pad size through pad_and_partition when padding.
    """
    if window_size < 1:
        raise ValueError(f"window_size must be >= 1, got {window_size}")
    if fi.width % window_size or fi.height % window_size:
        raise AlignmentError(
            f"image {fi.width}x{fi.height} not aligned to window size "
            f"{window_size}; apply pad_image first"
        )
    wx = fi.width // window_size
    wy = fi.height // window_size
    blocks = (
        fi.grid()
        .reshape(wy, window_size, wx, window_size)
        .transpose(0, 2, 1, 3)
        .reshape(wy * wx, window_size * window_size)
    )
    return WindowGrid(
        windows_x=wx,
        windows_y=wy,
        window_size=window_size,
        windows=blocks,
        orig_width=fi.width,
        orig_height=fi.height,
        factor=fi.factor,
        pad_token_id=pad_token_id(fi.factor),
    )


def pad_and_partition(fi: FoldedImage, window_size: int) -> WindowGrid:
    """pad_image followed by partition, keeping the pre-pad dimensions."""
    spec = PadSpec.for_factor(fi.factor, window_size)
    padded = pad_image(fi, spec)
    grid = partition(padded, window_size)
    grid.orig_width = fi.width
    grid.orig_height = fi.height
    return grid


def unpartition(grid: WindowGrid) -> FoldedImage:
    """Exact inverse of pad_and_partition: reassemble and crop the pad
    margin, returning the original orig_width x orig_height image."""
    if grid.num_windows == 0:
        raise EmptyImageError("cannot unpartition a grid with zero windows")
    ws = grid.window_size
    full = (
        grid.windows.reshape(grid.windows_y, grid.windows_x, ws, ws)
        .transpose(0, 2, 1, 3)
        .reshape(grid.windows_y * ws, grid.windows_x * ws)
    )
    region = full[: grid.orig_height, : grid.orig_width]
    if np.any(region == grid.pad_token_id):
        raise CorruptionError(
            "pad token found inside the original image region; "
            "grid does not come from pad_image of a real image"
        )
    return FoldedImage(
        width=grid.orig_width,
        height=grid.orig_height,
        factor=grid.factor,
        tokens=np.ascontiguousarray(region).reshape(-1),
    )


def _check_sub(window_size: int, sub_size: int) -> None:
    if sub_size < 1 or window_size % sub_size:
        raise AlignmentError(
            f"sub size {sub_size} does not divide window size {window_size}"
        )


def _window_side(seq_len: int) -> int:
    side = math.isqrt(seq_len)
    if side * side != seq_len:
        raise ValueError(f"window sequence length {seq_len} is not a square")
    return side


def sub_partition(window: np.ndarray, sub_size: int) -> list[np.ndarray]:
    """Split one window's 2-D extent into (ws/sub)^2 raster-ordered
    sub-windows, each raster-ordered internally."""
    window = np.asarray(window)
    ws = _window_side(window.shape[-1] if window.ndim else len(window))
    _check_sub(ws, sub_size)
    per_side = ws // sub_size
    blocks = (
        window.reshape(per_side, sub_size, per_side, sub_size)
        .transpose(0, 2, 1, 3)
        .reshape(per_side * per_side, sub_size * sub_size)
    )
    return [blocks[i] for i in range(blocks.shape[0])]


def sub_unpartition(subs: list[np.ndarray]) -> np.ndarray:
    """Inverse of sub_partition: reassemble the window's flat sequence."""
    if not subs:
        raise EmptyImageError("cannot reassemble zero sub-windows")
    sub_size = _window_side(len(subs[0]))
    per_side = math.isqrt(len(subs))
    if per_side * per_side != len(subs):
        raise ValueError(f"sub-window count {len(subs)} is not a square")
    ws = per_side * sub_size
    stack = np.stack(subs)
    full = (
        stack.reshape(per_side, per_side, sub_size, sub_size)
        .transpose(0, 2, 1, 3)
        .reshape(ws * ws)
    )
    return full
