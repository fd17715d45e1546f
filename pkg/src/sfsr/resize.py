"""Separable bicubic resampling with the Keys a=-0.5 kernel.

Deterministic by construction: half-pixel-center coordinate mapping,
clamp-to-edge for out-of-range taps, and per-pixel renormalization of the
four tap weights so they sum to exactly 1. Interpolation is computed in
float64 and cast back to the input dtype, which makes constant images
round-trip bit-exactly in float32.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor

KEYS_A = -0.5


def cubic_kernel(t: np.ndarray) -> np.ndarray:
    """Keys cubic weight W(t) with a = -0.5; support |t| < 2."""
    a = KEYS_A
    at = np.abs(np.asarray(t, dtype=np.float64))
    near = (a + 2.0) * at**3 - (a + 3.0) * at**2 + 1.0
    far = a * at**3 - 5.0 * a * at**2 + 8.0 * a * at - 4.0 * a
    return np.where(at <= 1.0, near, np.where(at < 2.0, far, 0.0))


def _axis_taps(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Clamped tap indices [n_out, 4] and renormalized weights [n_out, 4]."""
    dst = np.arange(n_out, dtype=np.float64)
    src = (dst + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src)
    frac = src - base
    offsets = np.arange(-1, 3, dtype=np.float64)
    weights = cubic_kernel(frac[:, None] - offsets[None, :])
    weights = weights / weights.sum(axis=1, keepdims=True)
    idx = np.clip(base[:, None].astype(np.int64) + offsets.astype(np.int64)[None, :], 0, n_in - 1)
    return idx, weights


def _resize_axis(x: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    idx, wts = _axis_taps(x.shape[axis], n_out)
    moved = np.moveaxis(x, axis, 0)
    gathered = moved[idx]  # [n_out, 4, ...]
    out = np.einsum("ot...,ot->o...", gathered, wts)
    return np.moveaxis(out, 0, axis)


def bicubic_resize(x, out_h: int, out_w: int):
    """Resize [N, C, H, W] (or [C, H, W]) to the requested spatial extents.

    Returns the same container kind as the input (Tensor in, Tensor out).
    Not part of the differentiation contract: the result is a fresh leaf.
    """
    is_tensor = isinstance(x, Tensor)
    arr = x.data if is_tensor else np.asarray(x)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"requested resize to {out_h}x{out_w}")
    if arr.ndim not in (3, 4):
        raise ShapeError(f"bicubic_resize expects rank 3 or 4, got shape {arr.shape}")
    work = arr.astype(np.float64, copy=False)
    work = _resize_axis(work, out_h, axis=arr.ndim - 2)
    work = _resize_axis(work, out_w, axis=arr.ndim - 1)
    out = work.astype(arr.dtype, copy=False)
    return Tensor(out) if is_tensor else out
