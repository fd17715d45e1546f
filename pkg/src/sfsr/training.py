"""L1 objective, Adam with bias correction, deterministic training loop,
and evaluation over image pairs.

Determinism contract: given (seed, config, data), the loss trajectory is
bit-for-bit reproducible, and resuming from a checkpoint continues the
exact sequence an uninterrupted run would have produced. Per-step
randomness is derived from (seed, step), never from a running stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .data import ImagePair, sample_patch
from .metrics import MetricReport, psnr, ssim
from .model import Model, forward
from .resize import bicubic_resize
from .tensor import NumericError, ShapeError, Tensor, absolute, tmean


def l1_loss(pred, target) -> Tensor:
    """Mean absolute difference over all elements."""
    if isinstance(pred, Tensor) and isinstance(target, Tensor):
        if pred.data.shape != target.data.shape:
            raise ShapeError(f"l1_loss shape mismatch: {pred.data.shape} vs {target.data.shape}")
    return tmean(absolute(pred - target))


@dataclass
class AdamState:
    """First/second moments per parameter plus hyperparameters."""

    alpha: float = 0.0002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @staticmethod
    def init(params: dict[str, Tensor], alpha: float = 0.0002, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return AdamState(
            alpha=alpha,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            t=0,
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )

    @staticmethod
    def from_checkpoint(meta: dict, tensors: dict[str, np.ndarray]) -> "AdamState":
        """Rebuild optimizer state from checkpoint metadata and records."""
        return AdamState(
            alpha=float(meta["alpha"]),
            beta1=float(meta["beta1"]),
            beta2=float(meta["beta2"]),
            eps=float(meta["eps"]),
            t=int(meta["step"]),
            m={k[len("adam.m/"):]: v for k, v in tensors.items() if k.startswith("adam.m/")},
            v={k[len("adam.v/"):]: v for k, v in tensors.items() if k.startswith("adam.v/")},
        )


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> AdamState:
    """One Adam update in place; raises on non-finite gradients."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data = p.data - (state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)
    return state


@dataclass
class TrainConfig:
    batch: int = 2
    epochs: int = 200
    patch_lr: int = 64
    seed: int = 0
    eval_every: int = 0
    checkpoint_path: str | None = None
    log_path: str | None = None
    alpha: float = 0.0002
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.patch_lr < 1:
            raise ValueError("patch_lr must be >= 1")


@dataclass
class LogRow:
    step: int
    loss: float
    psnr: float | None = None
    ssim: float | None = None

    def csv(self) -> str:
        p = "" if self.psnr is None else repr(self.psnr)
        s = "" if self.ssim is None else repr(self.ssim)
        return f"{self.step},{repr(self.loss)},{p},{s}"


@dataclass
class TrainResult:
    rows: list[LogRow]
    state: AdamState

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.rows]


def steps_per_epoch(n_pairs: int, batch: int) -> int:
    return math.ceil(n_pairs / batch)


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, step))))


def _make_batch(pairs: list[ImagePair], cfg: TrainConfig, rng: np.random.Generator):
    lr_list, hr_list = [], []
    for _ in range(cfg.batch):
        pair = pairs[int(rng.integers(0, len(pairs)))]
        patch = min(cfg.patch_lr, pair.lr.data.shape[-2], pair.lr.data.shape[-1])
        crop = sample_patch(pair, patch, rng)
        lr_list.append(crop.lr.data)
        hr_list.append(crop.hr.data)
    return Tensor(np.stack(lr_list)), Tensor(np.stack(hr_list))


def _write_log(path, rows: list[LogRow]) -> None:
    lines = ["step,loss,psnr,ssim"] + [r.csv() for r in rows]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def _save(model: Model, cfg: TrainConfig, state: AdamState) -> None:
    if cfg.checkpoint_path is None:
        return
    meta = {
        "alpha": state.alpha,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "step": state.t,
    }
    tensors = {f"adam.m/{k}": v for k, v in state.m.items()}
    tensors.update({f"adam.v/{k}": v for k, v in state.v.items()})
    save_checkpoint(cfg.checkpoint_path, model, optimizer_meta=meta, optimizer_tensors=tensors)


def train(
    model: Model,
    pairs: list[ImagePair],
    cfg: TrainConfig,
    val_pairs: list[ImagePair] | None = None,
    state: AdamState | None = None,
) -> TrainResult:
    """Run the optimization loop; resumes from ``state`` when given.

    Logs per-step loss (and validation PSNR/SSIM every ``eval_every``
    steps), writes checkpoints at eval intervals and at the end.
    """
    if not pairs:
        raise ValueError("training requires a non-empty pair list")
    params = model.named_parameters()
    if state is None:
        state = AdamState.init(params, alpha=cfg.alpha, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    total_steps = cfg.epochs * steps_per_epoch(len(pairs), cfg.batch)
    eval_pairs = val_pairs if val_pairs is not None else pairs

    rows: list[LogRow] = []
    for step in range(state.t, total_steps):
        rng = _step_rng(cfg.seed, step)
        x, y = _make_batch(pairs, cfg, rng)
        pred = forward(model, x)
        loss = l1_loss(pred, y)
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            raise NumericError(f"non-finite loss at step {step}")
        model.zero_grad()
        loss.backward()
        grads = {k: p.grad for k, p in params.items()}
        adam_step(params, grads, state)

        row = LogRow(step=step, loss=loss_val)
        if cfg.eval_every and (step + 1) % cfg.eval_every == 0:
            report = evaluate(model, eval_pairs)
            row.psnr = report.mean_psnr
            row.ssim = report.mean_ssim
            _save(model, cfg, state)
        rows.append(row)

    _save(model, cfg, state)
    if cfg.log_path is not None:
        _write_log(cfg.log_path, rows)
    return TrainResult(rows=rows, state=state)


def evaluate(model: Model, pairs: list[ImagePair]) -> MetricReport:
    """Score clamped model output against ground truth per pair."""
    if not pairs:
        raise ValueError("evaluate requires a non-empty pair list")
    ids, psnrs, ssims = [], [], []
    for pair in pairs:
        out = forward(model, Tensor(pair.lr.data[None]), clamp=True)
        pred = out.data[0]
        ids.append(pair.id)
        psnrs.append(psnr(pred, pair.hr.data))
        ssims.append(ssim(pred, pair.hr.data))
    return MetricReport(ids=ids, psnr_values=psnrs, ssim_values=ssims)


def bicubic_baseline(pairs: list[ImagePair]) -> MetricReport:
    """Score plain bicubic upscaling of the LR inputs (no model)."""
    if not pairs:
        raise ValueError("baseline requires a non-empty pair list")
    ids, psnrs, ssims = [], [], []
    for pair in pairs:
        hh, hw = pair.hr.data.shape[-2:]
        up = np.clip(bicubic_resize(pair.lr.data, hh, hw), 0.0, 1.0)
        ids.append(pair.id)
        psnrs.append(psnr(up, pair.hr.data))
        ssims.append(ssim(up, pair.hr.data))
    return MetricReport(ids=ids, psnr_values=psnrs, ssim_values=ssims)
