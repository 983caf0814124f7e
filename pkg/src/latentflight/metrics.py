"""Adjacent-frame consistency metrics: PSNR and SSIM over [0, 1] images.

SSIM follows the classic formulation: luminance conversion (ITU-R 601
weights), 11x11 Gaussian window with sigma 1.5, k1=0.01, k2=0.03, windows
fully inside the image, mean over the local map.  PSNR uses peak 1 and is
capped at 100 dB so identical frames stay finite in reports.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class SequenceReport:
    psnr_db: tuple[float, ...]
    ssim: tuple[float, ...]
    frame_count: int

    @property
    def mean_psnr_db(self) -> float:
        return float(np.mean(self.psnr_db))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    def to_json(self) -> str:
        return json.dumps(
            {
                "frame_count": self.frame_count,
                "psnr_db": list(self.psnr_db),
                "ssim": list(self.ssim),
                "mean_psnr_db": self.mean_psnr_db,
                "mean_ssim": self.mean_ssim,
            },
            indent=2,
        )

    def to_text(self) -> str:
        lines = [f"{'pair':>6}  {'psnr_db':>9}  {'ssim':>7}"]
        for i, (p, s) in enumerate(zip(self.psnr_db, self.ssim)):
            lines.append(f"{i:>3}-{i + 1:<3} {p:9.3f}  {s:7.4f}")
        lines.append(f"{'mean':>6}  {self.mean_psnr_db:9.3f}  {self.mean_ssim:7.4f}")
        return "\n".join(lines)


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images, capped at 100."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def _to_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ _LUMA
    if img.ndim == 2:
        return img
    raise ValueError(f"expected (H, W) or (H, W, 3) image, got {img.shape}")


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(img, kernel.shape)
    return np.einsum("hwkl,kl->hw", win, kernel)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local structural similarity on the luminance channel."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    ga, gb = _to_gray(a), _to_gray(b)
    if min(ga.shape) < SSIM_WINDOW:
        raise ValueError(f"image {ga.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    mu_a = _windowed_mean(ga, kernel)
    mu_b = _windowed_mean(gb, kernel)
    var_a = _windowed_mean(ga * ga, kernel) - mu_a**2
    var_b = _windowed_mean(gb * gb, kernel) - mu_b**2
    cov = _windowed_mean(ga * gb, kernel) - mu_a * mu_b
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def sequence_consistency(frames) -> SequenceReport:
    """PSNR/SSIM over every adjacent pair of frames."""
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    if len(frames) < 2:
        raise ValueError(f"need at least 2 frames, got {len(frames)}")
    pairs = list(zip(frames, frames[1:]))
    return SequenceReport(
        psnr_db=tuple(psnr(a, b) for a, b in pairs),
        ssim=tuple(ssim(a, b) for a, b in pairs),
        frame_count=len(frames),
    )
