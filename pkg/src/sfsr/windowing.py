"""Token and window bookkeeping for shifted-window attention.

Everything here is a pure permutation of values (plus the optional embed
normalization), so round-trips are bit-exact and gradients are the inverse
permutations.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .ops import layer_norm
from .tensor import ShapeError, Tensor, _accum, _node, as_tensor, reshape, roll2d, transpose

# Additive logit penalty for cross-region pairs in shifted windows. Large
# enough to zero the softmax weight in float32 without overflowing exp.
MASK_PENALTY = 100.0


@dataclass(frozen=True)
class WindowLayout:
    """Window geometry over an H x W feature grid."""

    h: int
    w: int
    window: int
    shift: int = 0

    def __post_init__(self):
        if self.window < 1:
            raise ShapeError(f"window {self.window} < 1")
        if not (0 <= self.shift < self.window):
            raise ShapeError(f"shift {self.shift} outside [0, {self.window})")
        if self.h % self.window or self.w % self.window:
            raise ShapeError(f"extents {self.h}x{self.w} not divisible by window {self.window}")

    @property
    def num_windows(self) -> int:
        return (self.h // self.window) * (self.w // self.window)


def patch_embed(x, norm: tuple[Tensor, Tensor] | None = None) -> Tensor:
    """[N,C,H,W] -> [N, H*W, C] row-major tokens, optionally layer-normed."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("patch_embed expects rank-4 input")
    n, c, h, w = x.data.shape
    tokens = reshape(transpose(x, (0, 2, 3, 1)), (n, h * w, c))
    if norm is not None:
        gamma, beta = norm
        tokens = layer_norm(tokens, gamma, beta)
    return tokens


def patch_unembed(tokens, h: int, w: int) -> Tensor:
    """[N, H*W, C] -> [N, C, H, W]; exact inverse of the un-normed embed."""
    tokens = as_tensor(tokens)
    if tokens.data.ndim != 3:
        raise ShapeError("patch_unembed expects rank-3 tokens")
    n, l, c = tokens.data.shape
    if l != h * w:
        raise ShapeError(f"token count {l} != {h}*{w}")
    return transpose(reshape(tokens, (n, h, w, c)), (0, 3, 1, 2))


def _partition_array(a: np.ndarray, window: int) -> np.ndarray:
    n, h, w, c = a.shape
    t = a.reshape(n, h // window, window, w // window, window, c)
    return np.ascontiguousarray(t.transpose(0, 1, 3, 2, 4, 5)).reshape(-1, window * window, c)


def _reverse_array(wins: np.ndarray, window: int, h: int, w: int) -> np.ndarray:
    c = wins.shape[-1]
    n = wins.shape[0] // ((h // window) * (w // window))
    t = wins.reshape(n, h // window, w // window, window, window, c)
    return np.ascontiguousarray(t.transpose(0, 1, 3, 2, 4, 5)).reshape(n, h, w, c)


def window_partition(x, window: int) -> Tensor:
    """[N,H,W,C] -> [N*(H/w)*(W/w), w*w, C], row-major tiles then positions."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("window_partition expects [N,H,W,C]")
    n, h, w, c = x.data.shape
    if h % window or w % window:
        raise ShapeError(f"extents {h}x{w} not divisible by window {window}")
    out = _partition_array(x.data, window)

    def bw(g):
        _accum(x, _reverse_array(g, window, h, w))

    return _node(out, (x,), bw)


def window_reverse(wins, window: int, h: int, w: int) -> Tensor:
    """Exact inverse of :func:`window_partition`."""
    wins = as_tensor(wins)
    if wins.data.ndim != 3 or wins.data.shape[1] != window * window:
        raise ShapeError("window_reverse expects [B, w*w, C]")
    if h % window or w % window or wins.data.shape[0] % ((h // window) * (w // window)):
        raise ShapeError("window_reverse extents inconsistent with batch")
    out = _reverse_array(wins.data, window, h, w)

    def bw(g):
        _accum(wins, _partition_array(g, window))

    return _node(out, (wins,), bw)


def cyclic_shift(x, shift: int) -> Tensor:
    """Toroidal roll of [N,H,W,C] by (-shift, -shift); invert with -shift."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("cyclic_shift expects [N,H,W,C]")
    if abs(shift) >= min(x.data.shape[1], x.data.shape[2]):
        raise ShapeError(f"shift {shift} too large for {x.data.shape[1]}x{x.data.shape[2]}")
    if shift == 0:
        return x
    return roll2d(x, -shift, -shift, axes=(1, 2))


@lru_cache(maxsize=64)
def _region_ids(h: int, w: int, window: int, shift: int) -> np.ndarray:
    """Pre-shift region id of every position, in rolled coordinates."""
    ids = np.zeros((h, w), dtype=np.int64)
    bounds = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    count = 0
    for hs in bounds:
        for ws in bounds:
            ids[hs, ws] = count
            count += 1
    return ids


def attention_mask(layout: WindowLayout) -> np.ndarray:
    """Per-window additive mask [num_windows, w^2, w^2]: 0 same-region, -100 across."""
    w2 = layout.window * layout.window
    if layout.shift == 0:
        return np.zeros((layout.num_windows, w2, w2), dtype=np.float64)
    ids = _region_ids(layout.h, layout.w, layout.window, layout.shift)
    wins = _partition_array(ids[None, :, :, None].astype(np.float64), layout.window)
    wins = wins.reshape(layout.num_windows, w2)
    same = wins[:, :, None] == wins[:, None, :]
    return np.where(same, 0.0, -MASK_PENALTY)


@lru_cache(maxsize=16)
def relative_position_index(window: int) -> np.ndarray:
    """Flattened pair table [w^2, w^2]: (dh + w-1)*(2w-1) + (dw + w-1)."""
    if window < 1:
        raise ShapeError("window must be >= 1")
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = flat[:, :, None] - flat[:, None, :]
    return (rel[0] + window - 1) * (2 * window - 1) + (rel[1] + window - 1)


def bias_table_size(window: int) -> int:
    return (2 * window - 1) ** 2
