"""PSNR and SSIM on display-referred (sRGB, [0, 1]) images."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .formats import to_display

PSNR_CAP = 99.0
WINDOW = 11
SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2
LUMA = np.array([0.2126, 0.7152, 0.0722])


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    masked_pixel_count: int

    def csv_header(self) -> str:
        return "psnr,ssim,masked_pixels"

    def csv_row(self) -> str:
        return f"{self.psnr:.6f},{self.ssim:.6f},{self.masked_pixel_count}"


def _prepare(a, b, mask):
    a = np.clip(np.asarray(a, dtype=np.float64), 0.0, 1.0)
    b = np.clip(np.asarray(b, dtype=np.float64), 0.0, 1.0)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if mask is None:
        mask = np.ones(a.shape[:2], dtype=bool)
    mask = np.asarray(mask).astype(bool)
    if mask.shape != a.shape[:2]:
        raise ValueError("mask shape does not match the images")
    if not mask.any():
        raise ValueError("mask selects no pixels")
    return a, b, mask


def psnr(a, b, mask=None) -> float:
    """10 log10(1 / MSE) over masked pixels (all channels); 99 dB for identical inputs."""
    a, b, mask = _prepare(a, b, mask)
    diff = (a - b)[mask]
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def luminance(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img @ LUMA if img.ndim == 3 else img


def ssim_map(a, b) -> np.ndarray:
    """SSIM of every full window (no padding); output is (H-10) x (W-10)."""
    x, y = luminance(a), luminance(b)
    if min(x.shape) < WINDOW:
        raise ValueError(f"images must be at least {WINDOW}x{WINDOW} for SSIM")
    w = gaussian_window()

    def filt(img):
        return np.tensordot(sliding_window_view(img, (WINDOW, WINDOW)), w, axes=([2, 3], [0, 1]))

    mx, my = filt(x), filt(y)
    vx = filt(x * x) - mx * mx
    vy = filt(y * y) - my * my
    cov = filt(x * y) - mx * my
    return ((2 * mx * my + C1) * (2 * cov + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2))


def ssim(a, b, mask=None) -> float:
    """Mean SSIM over windows whose center pixel is masked in."""
    a, b, mask = _prepare(a, b, mask)
    smap = ssim_map(a, b)
    half = WINDOW // 2
    centers = mask[half:mask.shape[0] - half, half:mask.shape[1] - half]
    if not centers.any():
        raise ValueError("no SSIM window is centred on a masked pixel")
    return float(smap[centers].mean())


def compare(rendered_linear, reference_linear, mask=None) -> MetricReport:
    """Metrics of a linear HDR render against a linear reference, both tone-mapped to sRGB."""
    a = to_display(rendered_linear)
    b = to_display(reference_linear)
    a, b, m = _prepare(a, b, mask)
    return MetricReport(psnr(a, b, m), ssim(a, b, m), int(m.sum()))


def compare_display(a, b, mask: Optional[np.ndarray] = None) -> MetricReport:
    a, b, m = _prepare(a, b, mask)
    return MetricReport(psnr(a, b, m), ssim(a, b, m), int(m.sum()))
