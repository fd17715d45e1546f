"""Fundus image super-resolution with shifted-window attention.

A self-contained pipeline: numpy-backed autodiff core, windowed-attention
model, bicubic degradation, L1/Adam training, PSNR/SSIM evaluation, and a
CLI. Deterministic end to end: same seed, same bits.
"""

from .checkpoint import load_model, read_checkpoint, save_checkpoint
from .data import ImagePair, SplitPlan, load_image, make_pair, prepare_hr, sample_patch, save_image, split_dataset
from .gradcheck import check_gradients
from .metrics import MetricReport, psnr, ssim
from .model import TINY_CONFIG, BlockCounts, Model, ModelConfig, build, forward, param_count
from .ops import (
    ConvSpec,
    adaptive_avg_pool_to_1x1,
    conv1d_tokens,
    conv2d,
    gelu,
    layer_norm,
    pixel_shuffle,
    relu,
    sigmoid,
    softmax,
    space_to_depth,
)
from .resize import bicubic_resize
from .tensor import NumericError, ShapeError, Tensor
from .training import AdamState, TrainConfig, adam_step, bicubic_baseline, evaluate, l1_loss, train
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

__version__ = "0.1.0"
