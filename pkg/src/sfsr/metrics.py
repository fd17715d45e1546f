"""Reference PSNR and SSIM for [0,1] images.

Scoring convention: full RGB image, no luma conversion, no border crop.
SSIM uses the classic 11x11 Gaussian window (sigma 1.5), K1=0.01,
K2=0.03, L=1, with same-size filtering under reflection padding; channels
are scored independently and averaged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .tensor import ShapeError, Tensor

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def psnr(a, b, max_val: float = 1.0) -> float:
    """10*log10(max^2 / MSE); identical inputs report +inf."""
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ShapeError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(max_val * max_val / mse)


def display_psnr(value: float) -> float:
    """Cap the infinite sentinel for tabular output."""
    return min(value, PSNR_CAP_DB)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter2d(plane: np.ndarray, window: np.ndarray) -> np.ndarray:
    out = correlate1d(plane, window, axis=0, mode="mirror")
    return correlate1d(out, window, axis=1, mode="mirror")


def _ssim_plane(a: np.ndarray, b: np.ndarray, window: np.ndarray, max_val: float) -> float:
    c1 = (SSIM_K1 * max_val) ** 2
    c2 = (SSIM_K2 * max_val) ** 2
    mu_a = _filter2d(a, window)
    mu_b = _filter2d(b, window)
    var_a = _filter2d(a * a, window) - mu_a * mu_a
    var_b = _filter2d(b * b, window) - mu_b * mu_b
    cov = _filter2d(a * b, window) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, max_val: float = 1.0) -> float:
    """Mean local structural similarity; 1.0 exactly for identical inputs."""
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ShapeError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise ShapeError(f"ssim expects [C,H,W] or [H,W], got shape {a.shape}")
    if min(a.shape[1], a.shape[2]) < SSIM_WINDOW:
        raise ShapeError(f"image {a.shape[1]}x{a.shape[2]} smaller than SSIM window {SSIM_WINDOW}")
    window = _gaussian_window()
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    return float(np.mean([_ssim_plane(a64[c], b64[c], window, max_val) for c in range(a.shape[0])]))


@dataclass
class MetricReport:
    """Per-image scores plus dataset aggregates."""

    ids: list[str]
    psnr_values: list[float]
    ssim_values: list[float]

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_values))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_values))

    @property
    def std_psnr(self) -> float:
        return float(np.std(self.psnr_values))

    @property
    def std_ssim(self) -> float:
        return float(np.std(self.ssim_values))

    def csv_lines(self) -> list[str]:
        lines = ["id,psnr,ssim"]
        for i, name in enumerate(self.ids):
            lines.append(f"{name},{display_psnr(self.psnr_values[i]):.6f},{self.ssim_values[i]:.6f}")
        lines.append(f"mean,{display_psnr(self.mean_psnr):.6f},{self.mean_ssim:.6f}")
        return lines

    def table_lines(self, title: str = "") -> list[str]:
        """Aligned plain-text table; SSIM rendered x100 as in common reports."""
        rows = [(name, display_psnr(p), s) for name, p, s in zip(self.ids, self.psnr_values, self.ssim_values)]
        rows.append(("mean", display_psnr(self.mean_psnr), self.mean_ssim))
        width = max(len(r[0]) for r in rows)
        lines = []
        if title:
            lines.append(title)
        lines.append(f"{'image':<{width}}  {'SSIM':>8}  {'PSNR':>8}")
        for name, p, s in rows:
            lines.append(f"{name:<{width}}  {100.0 * s:>8.2f}  {p:>8.2f}")
        return lines
