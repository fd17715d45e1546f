"""Network assembly: configuration, deterministic construction, forward
pass, and exact parameter accounting.

Layout: a 3x3 low-frequency conv feeds three parallel paths (identity,
a chain of channel-attention blocks, and a chain of residual swin blocks
on tokens); the fused sum goes through a 1x1 conv and one pixel shuffle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import (
    AttentionParams,
    ConvMlpParams,
    DcaParams,
    IrstbParams,
    NormParams,
    ScaParams,
    StlcParams,
    dca,
    irstb,
)
from .ops import ConvSpec, conv2d, pixel_shuffle
from .tensor import NumericError, ShapeError, Tensor, as_tensor, crop_hw, pad_reflect_hw
from .windowing import bias_table_size, patch_embed, patch_unembed


@dataclass(frozen=True)
class BlockCounts:
    """How many of each block the network stacks.

    ``n_sca`` counts spatial-attention blocks across the whole model; they
    are distributed evenly over the residual blocks, so it must be a
    multiple of ``n_irstb``.
    """

    n_irstb: int = 4
    n_dca: int = 4
    n_sca: int = 4
    n_stlc_per_irstb: int = 6

    def __post_init__(self):
        for name in ("n_irstb", "n_dca", "n_sca", "n_stlc_per_irstb"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be >= 1")
        if self.n_sca % self.n_irstb:
            raise ShapeError(
                f"n_sca={self.n_sca} must be a multiple of n_irstb={self.n_irstb}"
            )

    @property
    def sca_per_irstb(self) -> int:
        return self.n_sca // self.n_irstb


@dataclass(frozen=True)
class ModelConfig:
    scale: int
    embed_channels: int = 60
    window: int = 8
    heads: int = 6
    counts: BlockCounts = field(default_factory=BlockCounts)
    convmlp_expansion: int = 2
    img_channels: int = 3

    def __post_init__(self):
        if self.scale not in (2, 4):
            raise ShapeError(f"scale must be 2 or 4, got {self.scale}")
        if self.embed_channels < 1 or self.heads < 1 or self.embed_channels % self.heads:
            raise ShapeError(
                f"heads={self.heads} must divide embed_channels={self.embed_channels}"
            )
        if self.window < 1 or self.convmlp_expansion < 1 or self.img_channels < 1:
            raise ShapeError("window, convmlp_expansion and img_channels must be >= 1")

    @property
    def mlp_hidden(self) -> int:
        return self.convmlp_expansion * self.embed_channels

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "embed_channels": self.embed_channels,
            "window": self.window,
            "heads": self.heads,
            "n_irstb": self.counts.n_irstb,
            "n_dca": self.counts.n_dca,
            "n_sca": self.counts.n_sca,
            "n_stlc_per_irstb": self.counts.n_stlc_per_irstb,
            "convmlp_expansion": self.convmlp_expansion,
            "img_channels": self.img_channels,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            scale=int(d["scale"]),
            embed_channels=int(d["embed_channels"]),
            window=int(d["window"]),
            heads=int(d["heads"]),
            counts=BlockCounts(
                n_irstb=int(d["n_irstb"]),
                n_dca=int(d["n_dca"]),
                n_sca=int(d["n_sca"]),
                n_stlc_per_irstb=int(d["n_stlc_per_irstb"]),
            ),
            convmlp_expansion=int(d["convmlp_expansion"]),
            img_channels=int(d["img_channels"]),
        )


TINY_CONFIG = ModelConfig(
    scale=2,
    embed_channels=16,
    window=4,
    heads=2,
    counts=BlockCounts(n_irstb=1, n_dca=1, n_sca=1, n_stlc_per_irstb=2),
)


class Model:
    """Parameter collection plus config; supports deterministic forward."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.lf_w: Tensor
        self.lf_b: Tensor
        self.embed_norm: NormParams
        self.dca_blocks: list[DcaParams] = []
        self.irstb_blocks: list[IrstbParams] = []
        self.rec_w: Tensor
        self.rec_b: Tensor
        self._names: dict[str, Tensor] = {}

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self._names)

    def parameters(self) -> list[Tensor]:
        return list(self._names.values())

    def zero_grad(self) -> None:
        for p in self._names.values():
            p.zero_grad()

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self._names.values())

    def forward(self, x, clamp: bool = False) -> Tensor:
        return forward(self, x, clamp=clamp)


def _truncated_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    """Normal(0, std) with resampling outside +-2 std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype)


INIT_STD = 0.02


def build(config: ModelConfig, seed: int, dtype=np.float32) -> Model:
    """Deterministically initialize a model from (config, seed).

    Weights and the relative-position bias table draw from a truncated
    normal (std 0.02, +-2 std); biases start at zero, norm scales at one.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    model = Model(config)
    c = config.embed_channels
    hid = config.mlp_hidden
    counts = config.counts

    def weight(name: str, shape) -> Tensor:
        t = Tensor(_truncated_normal(rng, shape, INIT_STD, dtype), requires_grad=True)
        model._names[name] = t
        return t

    def const(name: str, shape, value: float) -> Tensor:
        t = Tensor(np.full(shape, value, dtype=dtype), requires_grad=True)
        model._names[name] = t
        return t

    def norm(prefix: str) -> NormParams:
        return NormParams(gamma=const(f"{prefix}.gamma", (c,), 1.0), beta=const(f"{prefix}.beta", (c,), 0.0))

    model.lf_w = weight("lf_conv.w", (c, config.img_channels, 3, 3))
    model.lf_b = const("lf_conv.b", (c,), 0.0)
    model.embed_norm = norm("embed_norm")

    for i in range(counts.n_dca):
        p = f"dca.{i}"
        model.dca_blocks.append(
            DcaParams(
                depth_w=weight(f"{p}.depth_w", (c, 1, 1, 1)),
                depth_b=const(f"{p}.depth_b", (c,), 0.0),
                point_w=weight(f"{p}.point_w", (c, c, 1, 1)),
                point_b=const(f"{p}.point_b", (c,), 0.0),
            )
        )

    table_rows = bias_table_size(config.window)
    for i in range(counts.n_irstb):
        blk = IrstbParams()
        for j in range(counts.n_stlc_per_irstb):
            p = f"irstb.{i}.stlc.{j}"
            blk.stlc.append(
                StlcParams(
                    norm1=norm(f"{p}.norm1"),
                    attn=AttentionParams(
                        qkv_w=weight(f"{p}.attn.qkv_w", (3 * c, c)),
                        qkv_b=const(f"{p}.attn.qkv_b", (3 * c,), 0.0),
                        proj_w=weight(f"{p}.attn.proj_w", (c, c)),
                        proj_b=const(f"{p}.attn.proj_b", (c,), 0.0),
                        bias_table=weight(f"{p}.attn.bias_table", (table_rows, config.heads)),
                        heads=config.heads,
                    ),
                    norm2=norm(f"{p}.norm2"),
                    mlp=ConvMlpParams(
                        w1=weight(f"{p}.mlp.w1", (hid, c)),
                        b1=const(f"{p}.mlp.b1", (hid,), 0.0),
                        w2=weight(f"{p}.mlp.w2", (c, hid)),
                        b2=const(f"{p}.mlp.b2", (c,), 0.0),
                    ),
                )
            )
        for j in range(counts.sca_per_irstb):
            p = f"irstb.{i}.sca.{j}"
            blk.sca.append(
                ScaParams(
                    point_w=weight(f"{p}.point_w", (c, c, 1, 1)),
                    point_b=const(f"{p}.point_b", (c,), 0.0),
                    dilated_w=weight(f"{p}.dilated_w", (c, c, 3, 3)),
                    dilated_b=const(f"{p}.dilated_b", (c,), 0.0),
                    depth_w=weight(f"{p}.depth_w", (c, 1, 1, 1)),
                    depth_b=const(f"{p}.depth_b", (c,), 0.0),
                )
            )
        model.irstb_blocks.append(blk)

    out_c = config.img_channels * config.scale * config.scale
    model.rec_w = weight("rec_conv.w", (out_c, c, 1, 1))
    model.rec_b = const("rec_conv.b", (out_c,), 0.0)

    expected = param_count(config).total
    actual = model.parameter_count()
    if actual != expected:
        raise AssertionError(f"built {actual} parameters, accounting says {expected}")
    return model


def _check_finite(t: Tensor, stage: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite activation after {stage}")


def forward(model: Model, x, clamp: bool = False) -> Tensor:
    """Run the network on [N, 3, H, W]; output [N, 3, H*r, W*r].

    Inputs whose extents are not multiples of the window are reflection-
    padded on the bottom/right and the output is cropped back. With
    ``clamp`` the result is clipped to [0, 1] and detached (inference).
    """
    cfg = model.config
    x = as_tensor(x)
    if x.data.ndim != 4 or x.data.shape[1] != cfg.img_channels:
        raise ShapeError(f"expected [N,{cfg.img_channels},H,W], got {x.data.shape}")
    n, _, h, w = x.data.shape
    win = cfg.window
    pad_b = (-h) % win
    pad_r = (-w) % win
    if pad_b or pad_r:
        x = pad_reflect_hw(x, (0, pad_b, 0, pad_r))
    hp, wp = h + pad_b, w + pad_r

    f_lf = conv2d(x, model.lf_w, model.lf_b, ConvSpec(kernel=(3, 3), padding=(1, 1)))
    _check_finite(f_lf, "low-frequency conv")

    f_sf = f_lf
    for i, blk in enumerate(model.dca_blocks):
        f_sf = dca(f_sf, blk)
    _check_finite(f_sf, "channel-attention chain")

    tokens = patch_embed(f_lf, (model.embed_norm.gamma, model.embed_norm.beta))
    for i, blk in enumerate(model.irstb_blocks):
        tokens = irstb(tokens, blk, hp, wp, win)
        _check_finite(tokens, f"residual swin block {i}")
    f_plf = patch_unembed(tokens, hp, wp)

    fused = f_lf + f_sf + f_plf
    out = conv2d(fused, model.rec_w, model.rec_b, ConvSpec(kernel=(1, 1)))
    out = pixel_shuffle(out, cfg.scale)
    _check_finite(out, "reconstruction")

    if pad_b or pad_r:
        out = crop_hw(out, h * cfg.scale, w * cfg.scale)
    if clamp:
        out = Tensor(np.clip(out.data, 0.0, 1.0))
    return out


@dataclass
class ParamCountReport:
    total: int
    breakdown: dict[str, int]

    def lines(self) -> list[str]:
        width = max(len(k) for k in self.breakdown)
        out = [f"{k:<{width}}  {v:>12,}" for k, v in self.breakdown.items()]
        out.append(f"{'total':<{width}}  {self.total:>12,}")
        return out


def conv2d_params(c_in: int, c_out: int, kh: int, kw: int, groups: int = 1) -> int:
    return c_out * (c_in // groups) * kh * kw + c_out


def param_count(config: ModelConfig) -> ParamCountReport:
    """Exact parameter accounting per block family (closed form)."""
    c = config.embed_channels
    hid = config.mlp_hidden
    counts = config.counts
    heads = config.heads

    h_lf = conv2d_params(config.img_channels, c, 3, 3)
    dca_total = counts.n_dca * (conv2d_params(c, c, 1, 1, groups=c) + conv2d_params(c, c, 1, 1))
    n_stlc = counts.n_irstb * counts.n_stlc_per_irstb
    attention = n_stlc * ((c * 3 * c + 3 * c) + (c * c + c) + bias_table_size(config.window) * heads)
    conv_mlp = n_stlc * ((c * hid + hid) + (hid * c + c))
    sca_total = counts.n_sca * (
        conv2d_params(c, c, 1, 1) + conv2d_params(c, c, 3, 3) + conv2d_params(c, c, 1, 1, groups=c)
    )
    norms = 2 * c + n_stlc * 4 * c  # embed norm + two norms per transformer layer
    out_c = config.img_channels * config.scale * config.scale
    h_rec = conv2d_params(c, out_c, 1, 1)

    breakdown = {
        "h_lf": h_lf,
        "dca": dca_total,
        "attention": attention,
        "conv_mlp": conv_mlp,
        "sca": sca_total,
        "norms": norms,
        "h_rec": h_rec,
    }
    return ParamCountReport(total=sum(breakdown.values()), breakdown=breakdown)


@dataclass
class MlpComparison:
    """Shared-weight token map vs an unshared per-position map over a
    sequence of the given depth (weights only, zero bias on both sides)."""

    depth: int
    c_in: int
    c_out: int

    @property
    def conv_params(self) -> int:
        return self.c_in * self.c_out

    @property
    def dense_params(self) -> int:
        return self.depth * self.c_in * self.c_out

    @property
    def ratio(self) -> int:
        return self.dense_params // self.conv_params
