"""Shared fixtures: synthetic images and the (expensive) overfit training
run reused by the acceptance and CLI tests."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from sfsr import ImagePair, make_pair
from sfsr.model import TINY_CONFIG, build
from sfsr.training import TrainConfig, TrainResult, train

OVERFIT_SEED = 7
OVERFIT_STEPS = 2000
N_OVERFIT_PAIRS = 4


def blocky_image(size: int, seed: int, sigma: float = 1.0) -> np.ndarray:
    """Cell-structured test image: constant 2x2 blocks from a smoothed
    random field, with a warm channel tint.

    Chosen so the ideal upscale is a local function of the LR input (the
    degradation of block-constant content is an invertible local filter)
    while plain bicubic interpolation smears every cell boundary.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    latent = gaussian_filter(rng.standard_normal((size // 2, size // 2)), sigma)
    latent = (latent - latent.min()) / (latent.max() - latent.min())
    plane = np.kron(0.15 + 0.7 * latent, np.ones((2, 2)))
    channels = np.stack([plane * 1.15, plane * 0.85, plane * 0.6])
    return np.clip(channels, 0.0, 1.0).astype(np.float32)


def make_overfit_pairs() -> list[ImagePair]:
    return [make_pair(blocky_image(64, s), 2, f"img{s}") for s in range(N_OVERFIT_PAIRS)]


@dataclass
class OverfitRun:
    pairs: list[ImagePair]
    checkpoint_a: Path
    checkpoint_b: Path
    log_a: Path
    log_b: Path
    result_a: TrainResult
    result_b: TrainResult
    elapsed_a: float
    model_a: object


def _single_run(pairs, checkpoint: Path, log: Path):
    model = build(TINY_CONFIG, seed=OVERFIT_SEED)
    cfg = TrainConfig(
        batch=2,
        epochs=OVERFIT_STEPS // 2,  # 4 pairs / batch 2 -> 2 steps per epoch
        patch_lr=32,
        seed=OVERFIT_SEED,
        checkpoint_path=str(checkpoint),
        log_path=str(log),
    )
    result = train(model, pairs, cfg)
    return model, result


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory) -> OverfitRun:
    """Train the tiny model twice with identical seeds (runs A and B)."""
    import time

    base = tmp_path_factory.mktemp("overfit")
    pairs = make_overfit_pairs()
    t0 = time.time()
    model_a, result_a = _single_run(pairs, base / "a.sfsr", base / "a.csv")
    elapsed_a = time.time() - t0
    _, result_b = _single_run(pairs, base / "b.sfsr", base / "b.csv")
    return OverfitRun(
        pairs=pairs,
        checkpoint_a=base / "a.sfsr",
        checkpoint_b=base / "b.sfsr",
        log_a=base / "a.csv",
        log_b=base / "b.csv",
        result_a=result_a,
        result_b=result_b,
        elapsed_a=elapsed_a,
        model_a=model_a,
    )
