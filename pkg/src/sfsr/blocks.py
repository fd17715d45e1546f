"""Composite network blocks: windowed attention, conv-token MLP, channel
and spatial attention, and the residual block that combines them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ops import (
    ConvSpec,
    adaptive_avg_pool_to_1x1,
    conv1d_tokens,
    conv2d,
    gelu,
    layer_norm,
    relu,
    sigmoid,
    softmax,
)
from .tensor import ShapeError, Tensor, as_tensor, matmul, reshape, slice_axis, take_rows, transpose
from .windowing import (
    WindowLayout,
    attention_mask,
    cyclic_shift,
    patch_embed,
    patch_unembed,
    relative_position_index,
    window_partition,
    window_reverse,
)


@dataclass
class NormParams:
    gamma: Tensor
    beta: Tensor


@dataclass
class AttentionParams:
    """Multi-head windowed self-attention weights.

    qkv_w: [3C, C], qkv_b: [3C]; proj_w: [C, C], proj_b: [C];
    bias_table: [(2w-1)^2, heads].
    """

    qkv_w: Tensor
    qkv_b: Tensor
    proj_w: Tensor
    proj_b: Tensor
    bias_table: Tensor
    heads: int


@dataclass
class ConvMlpParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class StlcParams:
    norm1: NormParams
    attn: AttentionParams
    norm2: NormParams
    mlp: ConvMlpParams


@dataclass
class DcaParams:
    depth_w: Tensor
    depth_b: Tensor
    point_w: Tensor
    point_b: Tensor


@dataclass
class ScaParams:
    point_w: Tensor
    point_b: Tensor
    dilated_w: Tensor
    dilated_b: Tensor
    depth_w: Tensor
    depth_b: Tensor


@dataclass
class IrstbParams:
    stlc: list[StlcParams] = field(default_factory=list)
    sca: list[ScaParams] = field(default_factory=list)


def sw_msa(tokens, params: AttentionParams, layout: WindowLayout) -> Tensor:
    """Window multi-head self-attention over row-major tokens [N, H*W, C].

    Pipeline: spatial reshape -> cyclic shift -> window partition -> scaled
    dot-product attention with relative-position bias (and a cross-region
    mask when shifted) -> inverse permutations.
    """
    tokens = as_tensor(tokens)
    n, l, c = tokens.data.shape
    if l != layout.h * layout.w:
        raise ShapeError(f"token count {l} != {layout.h}x{layout.w}")
    heads = params.heads
    if c % heads:
        raise ShapeError(f"heads {heads} does not divide channels {c}")
    win = layout.window
    l_w = win * win
    head_dim = c // heads
    scale = 1.0 / np.sqrt(head_dim)

    x = reshape(tokens, (n, layout.h, layout.w, c))
    x = cyclic_shift(x, layout.shift)
    wins = window_partition(x, win)  # [B, w*w, C]
    b = wins.data.shape[0]

    qkv = conv1d_tokens(wins, params.qkv_w, params.qkv_b)  # [B, w*w, 3C]

    def split_heads(t):
        return transpose(reshape(t, (b, l_w, heads, head_dim)), (0, 2, 1, 3))

    q = split_heads(slice_axis(qkv, 2, 0, c))
    k = split_heads(slice_axis(qkv, 2, c, 2 * c))
    v = split_heads(slice_axis(qkv, 2, 2 * c, 3 * c))

    logits = matmul(q, transpose(k, (0, 1, 3, 2))) * scale  # [B, heads, w*w, w*w]

    idx = relative_position_index(win).reshape(-1)
    bias = take_rows(params.bias_table, idx)  # [w^4, heads]
    bias = transpose(reshape(bias, (l_w, l_w, heads)), (2, 0, 1))
    logits = logits + bias

    if layout.shift > 0:
        mask = attention_mask(layout).astype(tokens.data.dtype)
        mask_full = np.tile(mask, (n, 1, 1))[:, None, :, :]  # [B, 1, w*w, w*w]
        logits = logits + Tensor(mask_full)

    attn = softmax(logits, axis=-1)
    out = matmul(attn, v)  # [B, heads, w*w, head_dim]
    out = reshape(transpose(out, (0, 2, 1, 3)), (b, l_w, c))
    out = conv1d_tokens(out, params.proj_w, params.proj_b)

    x = window_reverse(out, win, layout.h, layout.w)
    x = cyclic_shift(x, -layout.shift)
    return reshape(x, (n, l, c))


def conv_mlp(tokens, params: ConvMlpParams) -> Tensor:
    """Position-wise two-layer token map: kernel-1 conv, GELU, kernel-1 conv."""
    h = conv1d_tokens(tokens, params.w1, params.b1)
    return conv1d_tokens(gelu(h), params.w2, params.b2)


def stlc(tokens, params: StlcParams, layout: WindowLayout) -> Tensor:
    """Pre-norm transformer layer with attention and conv-MLP residuals."""
    x1 = sw_msa(layer_norm(tokens, params.norm1.gamma, params.norm1.beta), params.attn, layout) + tokens
    return conv_mlp(layer_norm(x1, params.norm2.gamma, params.norm2.beta), params.mlp) + x1


def dca(x, params: DcaParams) -> Tensor:
    """Depth-wise channel attention: pooled per-channel gate applied to x.

    gate = sigmoid(conv1x1(relu(depthwise_conv1x1(global_avg_pool(x))))),
    broadcast over the spatial plane.
    """
    x = as_tensor(x)
    c = x.data.shape[1]
    pooled = adaptive_avg_pool_to_1x1(x)
    depth = conv2d(pooled, params.depth_w, params.depth_b, ConvSpec(kernel=(1, 1), groups=c))
    gate = sigmoid(conv2d(relu(depth), params.point_w, params.point_b, ConvSpec(kernel=(1, 1))))
    return x * gate


def sca(x, params: ScaParams) -> Tensor:
    """Spatial and channel attention: sum of pointwise, dilated 3x3 (d=2),
    and depthwise pointwise convolutions of the input."""
    x = as_tensor(x)
    c = x.data.shape[1]
    point = conv2d(x, params.point_w, params.point_b, ConvSpec(kernel=(1, 1)))
    dilated = conv2d(x, params.dilated_w, params.dilated_b, ConvSpec(kernel=(3, 3), dilation=2, padding=(2, 2)))
    depth = conv2d(x, params.depth_w, params.depth_b, ConvSpec(kernel=(1, 1), groups=c))
    return point + dilated + depth


def stlc_layouts(h: int, w: int, window: int, depth: int) -> list[WindowLayout]:
    """Alternating shift schedule 0, w/2, 0, ... for a chain of layers."""
    return [WindowLayout(h, w, window, 0 if i % 2 == 0 else window // 2) for i in range(depth)]


def irstb(tokens, params: IrstbParams, h: int, w: int, window: int) -> Tensor:
    """Residual block: STLc chain + spatial-attention branch + identity.

    The spatial branch sees the block input reshaped to [N,C,H,W] (pure
    permutation, no normalization) and is re-embedded the same way.
    """
    tokens = as_tensor(tokens)
    layouts = stlc_layouts(h, w, window, len(params.stlc))
    t = tokens
    for layer, layout in zip(params.stlc, layouts):
        t = stlc(t, layer, layout)
    spatial = patch_unembed(tokens, h, w)
    for branch in params.sca:
        spatial = sca(spatial, branch)
    return t + patch_embed(spatial) + tokens
