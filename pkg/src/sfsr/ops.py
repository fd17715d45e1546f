"""Neural-network operations on the autodiff tensor type.

Convolutions use an explicit per-tap gather so that stride, dilation and
grouping all reduce to strided slicing; the backward pass scatters through
the same taps, which keeps analytic gradients exactly transposed to the
forward map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .tensor import (
    ShapeError,
    Tensor,
    _accum,
    _node,
    as_tensor,
    matmul,
    reshape,
    tmean,
    transpose,
)


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2-D convolution: kernel, stride, dilation, groups, padding.

    Padding is the amount added symmetrically along each spatial axis
    (zeros). ``groups`` must divide both the input and output channel
    counts.
    """

    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    dilation: int = 1
    groups: int = 1
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self):
        kh, kw = self.kernel
        if kh < 1 or kw < 1 or self.stride < 1 or self.dilation < 1 or self.groups < 1:
            raise ShapeError(f"invalid conv spec {self}")
        if self.padding[0] < 0 or self.padding[1] < 0:
            raise ShapeError(f"negative padding in {self}")

    def out_extent(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        oh = (h + 2 * self.padding[0] - self.dilation * (kh - 1) - 1) // self.stride + 1
        ow = (w + 2 * self.padding[1] - self.dilation * (kw - 1) - 1) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"non-positive conv output {oh}x{ow} for input {h}x{w} with {self}")
        return oh, ow


def conv2d(x, w, b, spec: ConvSpec) -> Tensor:
    """Grouped dilated 2-D convolution, NCHW layout, zero padding.

    x: [N, C_in, H, W]; w: [C_out, C_in/groups, kh, kw]; b: [C_out].
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 4 or b.data.ndim != 1:
        raise ShapeError("conv2d expects x rank 4, w rank 4, b rank 1")
    n, c_in, h, w_in = x.data.shape
    c_out, c_in_g, kh, kw = w.data.shape
    g = spec.groups
    if (kh, kw) != spec.kernel:
        raise ShapeError(f"weight kernel {kh}x{kw} does not match spec {spec.kernel}")
    if c_in % g or c_out % g or c_in_g != c_in // g:
        raise ShapeError(f"groups={g} incompatible with channels {c_in}->{c_out}, weight {w.data.shape}")
    if b.data.shape[0] != c_out:
        raise ShapeError(f"bias extent {b.data.shape[0]} != out channels {c_out}")
    oh, ow = spec.out_extent(h, w_in)
    ph, pw = spec.padding
    s, d = spec.stride, spec.dilation

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    # Gather the receptive field tap by tap; each tap is a strided view.
    patches = np.empty((n, c_in, oh, ow, kh, kw), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            patches[..., i, j] = xp[:, :, i * d : i * d + oh * s : s, j * d : j * d + ow * s : s]
    # [N, OH*OW, G, (C_in/G)*kh*kw]
    cols = (
        patches.reshape(n, g, c_in_g, oh, ow, kh * kw)
        .transpose(0, 3, 4, 1, 2, 5)
        .reshape(n, oh * ow, g, c_in_g * kh * kw)
    )
    wg = w.data.reshape(g, c_out // g, c_in_g * kh * kw)
    out = np.einsum("npgk,gok->npgo", cols, wg, optimize=True)
    out = out.reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2).copy()
    out += b.data[None, :, None, None]

    def bw(grad):
        gg = grad.transpose(0, 2, 3, 1).reshape(n, oh * ow, g, c_out // g)
        _accum(b, grad.sum(axis=(0, 2, 3)))
        gw = np.einsum("npgo,npgk->gok", gg, cols, optimize=True)
        _accum(w, gw.reshape(c_out, c_in_g, kh, kw))
        if x.requires_grad:
            dcols = np.einsum("npgo,gok->npgk", gg, wg, optimize=True)
            dpatches = (
                dcols.reshape(n, oh, ow, g, c_in_g, kh * kw)
                .transpose(0, 3, 4, 1, 2, 5)
                .reshape(n, c_in, oh, ow, kh, kw)
            )
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i * d : i * d + oh * s : s, j * d : j * d + ow * s : s] += dpatches[..., i, j]
            _accum(x, dxp[:, :, ph : ph + h, pw : pw + w_in])

    return _node(out, (x, w, b), bw)


def conv1d_tokens(x, w, b) -> Tensor:
    """Kernel-1 1-D convolution over token sequences: y[n,l] = w @ x[n,l] + b.

    x: [N, L, C_in]; w: [C_out, C_in]; b: [C_out]. The same weights apply at
    every position, so the parameter count is C_in*C_out + C_out regardless
    of sequence length.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 3 or w.data.ndim != 2:
        raise ShapeError("conv1d_tokens expects x rank 3 and w rank 2")
    if x.data.shape[2] != w.data.shape[1]:
        raise ShapeError(f"channel mismatch: tokens {x.data.shape[2]} vs weight {w.data.shape[1]}")
    if b.data.shape != (w.data.shape[0],):
        raise ShapeError("bias extent does not match out channels")
    y = matmul(x, transpose(w, (1, 0)))
    return y + reshape(b, (1, 1, w.data.shape[0]))


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"layer_norm affine extent must be ({c},)")
    if eps <= 0:
        raise ShapeError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        _accum(beta, g.sum(axis=tuple(range(g.ndim - 1))))
        _accum(gamma, (g * xhat).sum(axis=tuple(range(g.ndim - 1))))
        if x.requires_grad:
            gx = g * gamma.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (gx - m1 - xhat * m2))

    return _node(out, (x, gamma, beta), bw)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, x.data.dtype.type(0))

    def bw(g):
        _accum(x, g * mask)

    return _node(out, (x,), bw)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = special.expit(x.data)

    def bw(g):
        _accum(x, g * out * (1.0 - out))

    return _node(out, (x,), bw)


_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def gelu(x) -> Tensor:
    """Exact Gaussian-CDF form: x * Phi(x)."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + special.erf(x.data * _INV_SQRT2))
    out = (x.data * cdf).astype(x.data.dtype, copy=False)

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        _accum(x, (g * (cdf + x.data * pdf)).astype(x.data.dtype, copy=False))

    return _node(out, (x,), bw)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(x, out * (g - dot))

    return _node(out, (x,), bw)


def adaptive_avg_pool_to_1x1(x) -> Tensor:
    """Mean over the full spatial plane of each channel: [N,C,H,W] -> [N,C,1,1]."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("adaptive_avg_pool_to_1x1 expects rank-4 input")
    return tmean(x, axis=(2, 3), keepdims=True)


def pixel_shuffle(x, r: int) -> Tensor:
    """Depth-to-space: [N, C*r^2, H, W] -> [N, C, H*r, W*r] (pure permutation)."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("pixel_shuffle expects rank-4 input")
    n, c_r2, h, w = x.data.shape
    if r < 1 or c_r2 % (r * r):
        raise ShapeError(f"channels {c_r2} not divisible by r^2={r * r}")
    c = c_r2 // (r * r)
    out = (
        x.data.reshape(n, c, r, r, h, w)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, c, h * r, w * r)
    )

    def bw(g):
        _accum(x, _space_to_depth_array(g, r))

    return _node(np.ascontiguousarray(out), (x,), bw)


def _space_to_depth_array(a: np.ndarray, r: int) -> np.ndarray:
    n, c, hr, wr = a.shape
    h, w = hr // r, wr // r
    return np.ascontiguousarray(
        a.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)
    )


def space_to_depth(x, r: int) -> Tensor:
    """Inverse of pixel_shuffle: [N, C, H*r, W*r] -> [N, C*r^2, H, W]."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("space_to_depth expects rank-4 input")
    n, c, hr, wr = x.data.shape
    if hr % r or wr % r:
        raise ShapeError(f"spatial extents {hr}x{wr} not divisible by r={r}")
    out = _space_to_depth_array(x.data, r)

    def bw(g):
        gp = (
            g.reshape(n, c, r, r, hr // r, wr // r)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, c, hr, wr)
        )
        _accum(x, gp)

    return _node(out, (x,), bw)
