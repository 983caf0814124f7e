"""Frequency-split warping: move low frequencies, keep the original high band.

A latent grid is separated per channel into a low band (centered spectral
bins within Euclidean radius ``sigma``) and the complementary high band.
Only the low band travels through the geometric warp; the untouched high
band is re-attached afterwards, so fine detail survives the scatter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .geometry import CameraIntrinsics, CameraPose, DepthMap, WarpResult

_IMAG_TOL = 1e-6


@dataclass(frozen=True)
class SpectralSplit:
    """Low band back in the spatial domain plus the residual complex spectrum.

    ``high_band`` is the centered (fftshift) spectrum, zeroed inside the
    low-band mask, so the two bands partition every bin exactly.
    """

    low_spatial: np.ndarray
    high_band: np.ndarray
    sigma: float


def _radius_mask(h: int, w: int, sigma: float) -> np.ndarray:
    fy = np.arange(h) - h // 2
    fx = np.arange(w) - w // 2
    dist = np.hypot(fy[:, None], fx[None, :])
    return dist <= sigma


def _to_real(x: np.ndarray) -> np.ndarray:
    residue = np.max(np.abs(x.imag)) if x.size else 0.0
    if residue >= _IMAG_TOL:
        raise AssertionError(f"imaginary residue {residue:.3e} after inverse transform")
    return x.real


def split_frequency(x: np.ndarray, sigma: float) -> SpectralSplit:
    """Split a (C, H, W) grid at radial threshold ``sigma`` (bin units)."""
    x = np.asarray(x, dtype=np.float64)
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if x.ndim != 3 or x.shape[1] < 2 or x.shape[2] < 2:
        raise ValueError(f"expected (C, H, W) with spatial dims >= 2, got {x.shape}")
    _, h, w = x.shape
    spectrum = np.fft.fftshift(np.fft.fft2(x, axes=(1, 2)), axes=(1, 2))
    mask = _radius_mask(h, w, sigma)
    low = np.where(mask, spectrum, 0.0)
    high = np.where(mask, 0.0, spectrum)
    low_spatial = _to_real(np.fft.ifft2(np.fft.ifftshift(low, axes=(1, 2)), axes=(1, 2)))
    return SpectralSplit(low_spatial=low_spatial, high_band=high, sigma=float(sigma))


def merge_frequency(low_warped: np.ndarray, high_band: np.ndarray) -> np.ndarray:
    """Recombine a spatial low band with a stored high-band spectrum."""
    low_warped = np.asarray(low_warped, dtype=np.float64)
    if low_warped.shape != high_band.shape:
        raise ValueError(f"shape mismatch: {low_warped.shape} vs {high_band.shape}")
    spectrum = np.fft.fftshift(np.fft.fft2(low_warped, axes=(1, 2)), axes=(1, 2)) + high_band
    return _to_real(np.fft.ifft2(np.fft.ifftshift(spectrum, axes=(1, 2)), axes=(1, 2)))


def warp_latent_highpass(
    x_t: np.ndarray,
    depth: DepthMap,
    k: CameraIntrinsics,
    pose: CameraPose,
    sigma: float,
) -> tuple[np.ndarray, WarpResult]:
    """Warp only the low-frequency content of a latent; keep its high band.

    The warped low band is re-restricted to the low mask before merging, so
    the output spectrum outside radius ``sigma`` equals the input's exactly
    (scattering leaks energy into high bins; that leak is discarded in favor
    of the original detail).  Returns the merged latent and the warp field
    for reuse on key/value and feature grids.
    """
    split = split_frequency(x_t, sigma)
    low_warped, warp = geometry.forward_warp(split.low_spatial, depth, k, pose)
    low_only = split_frequency(low_warped, sigma).low_spatial
    return merge_frequency(low_only, split.high_band), warp
