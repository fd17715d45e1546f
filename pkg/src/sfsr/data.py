"""Dataset ingestion, bicubic degradation, splitting, and patch sampling.

Directory convention: ``<root>/<dataset>/hr/*.png`` holds the originals;
derived low-resolution copies are cached under
``<root>/<dataset>/lr_x{r}/``; split plans are JSON files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .resize import bicubic_resize
from .tensor import ShapeError, Tensor

HR_SIZE = 512


@dataclass
class ImagePair:
    """Aligned low/high-resolution pair; hr extents are exactly scale x lr."""

    lr: Tensor
    hr: Tensor
    id: str
    scale: int

    def __post_init__(self):
        lh, lw = self.lr.data.shape[-2:]
        hh, hw = self.hr.data.shape[-2:]
        if (hh, hw) != (lh * self.scale, lw * self.scale):
            raise ShapeError(f"pair '{self.id}': hr {hh}x{hw} is not {self.scale}x lr {lh}x{lw}")


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG as float32 [3,H,W] in [0,1]; grayscale replicates."""
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise ValueError(f"unreadable image '{path}': {exc}") from exc
    if img.mode == "L":
        img = img.convert("RGB")
    if img.mode != "RGB":
        raise ValueError(f"image '{path}' has mode {img.mode}; expected RGB or grayscale")
    arr = np.asarray(img, dtype=np.uint8)
    return (arr.astype(np.float32) / 255.0).transpose(2, 0, 1)


def save_image(arr, path) -> None:
    """Write float [3,H,W] in [0,1] to PNG, rounding half-up to bytes."""
    data = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
    if data.ndim != 3 or data.shape[0] != 3:
        raise ShapeError(f"save_image expects [3,H,W], got {data.shape}")
    quantized = np.clip(np.floor(data * 255.0 + 0.5), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantized.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def prepare_hr(arr: np.ndarray, size: int = HR_SIZE) -> np.ndarray:
    """Bicubic-resize any [3,H,W] image to the training resolution, clamped."""
    out = bicubic_resize(arr, size, size)
    return np.clip(out, 0.0, 1.0)


def make_pair(hr: np.ndarray, scale: int, pair_id: str = "") -> ImagePair:
    """Degrade an HR image to its bicubic LR counterpart."""
    h, w = hr.shape[-2:]
    if h % scale or w % scale:
        raise ShapeError(f"hr extents {h}x{w} not divisible by scale {scale}")
    lr = np.clip(bicubic_resize(hr, h // scale, w // scale), 0.0, 1.0)
    return ImagePair(lr=Tensor(lr.astype(np.float32)), hr=Tensor(hr.astype(np.float32)), id=pair_id, scale=scale)


@dataclass
class SplitPlan:
    """Deterministic 80/20 split with round-robin 5-fold assignment."""

    train_ids: list[str]
    test_ids: list[str]
    folds: dict[str, int]
    seed: int

    N_FOLDS = 5

    def fold_members(self, fold: int) -> list[str]:
        return [i for i in self.train_ids if self.folds[i] == fold]

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "train": self.train_ids,
                "test": self.test_ids,
                "folds": self.folds,
            },
            indent=2,
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "SplitPlan":
        d = json.loads(text)
        return SplitPlan(
            train_ids=list(d["train"]),
            test_ids=list(d["test"]),
            folds={k: int(v) for k, v in d["folds"].items()},
            seed=int(d["seed"]),
        )


def split_dataset(ids: list[str], seed: int) -> SplitPlan:
    """Shuffle by seed, take the first 80% (floor) as train, rest as test."""
    if len(ids) < SplitPlan.N_FOLDS:
        raise ValueError(f"need at least {SplitPlan.N_FOLDS} ids, got {len(ids)}")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = [ids[i] for i in rng.permutation(len(ids))]
    n_train = int(len(ids) * 0.8)
    train = order[:n_train]
    test = order[n_train:]
    folds = {name: i % SplitPlan.N_FOLDS for i, name in enumerate(train)}
    return SplitPlan(train_ids=train, test_ids=test, folds=folds, seed=seed)


def sample_patch(pair: ImagePair, patch_lr: int, rng: np.random.Generator) -> ImagePair:
    """Uniformly random aligned crop: lr patch and its r-scaled hr patch."""
    lh, lw = pair.lr.data.shape[-2:]
    if patch_lr > lh or patch_lr > lw:
        raise ShapeError(f"patch {patch_lr} exceeds lr extents {lh}x{lw}")
    top = int(rng.integers(0, lh - patch_lr + 1))
    left = int(rng.integers(0, lw - patch_lr + 1))
    r = pair.scale
    lr = pair.lr.data[:, top : top + patch_lr, left : left + patch_lr]
    hr = pair.hr.data[:, r * top : r * (top + patch_lr), r * left : r * (left + patch_lr)]
    return ImagePair(lr=Tensor(lr.copy()), hr=Tensor(hr.copy()), id=pair.id, scale=r)


# Directory layout helpers


def hr_dir(root, dataset: str) -> Path:
    return Path(root) / dataset / "hr"


def lr_dir(root, dataset: str, scale: int) -> Path:
    return Path(root) / dataset / f"lr_x{scale}"


def list_ids(directory) -> list[str]:
    return sorted(p.stem for p in Path(directory).glob("*.png"))


def load_pairs(root, dataset: str, scale: int, ids: list[str]) -> list[ImagePair]:
    """Load cached lr/hr pairs for the given ids."""
    pairs = []
    for pair_id in ids:
        hr = load_image(hr_dir(root, dataset) / f"{pair_id}.png")
        lr = load_image(lr_dir(root, dataset, scale) / f"{pair_id}.png")
        pairs.append(ImagePair(lr=Tensor(lr), hr=Tensor(hr), id=pair_id, scale=scale))
    return pairs
