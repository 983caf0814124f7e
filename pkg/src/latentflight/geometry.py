"""Pinhole-camera math: intrinsics rescaling, reprojection, forward warping.

Conventions used throughout the package:

* Grids are channels-first float64 arrays of shape (C, H, W); depth maps are
  (H, W).  Pixel (u, v) = (column, row), with integer coordinates at pixel
  centers.
* The camera is right-handed and looks down +z.  A :class:`CameraPose` maps
  current-camera coordinates to next-camera coordinates, ``X' = R @ X + T``,
  so moving the camera forward by ``s`` is ``T = (0, 0, -s)``.
* Forward warping scatters source pixels into the target frame and resolves
  collisions with a z-buffer: smallest target depth wins, exact ties go to
  the smaller row-major source index.  Target coordinates are rounded with
  ``floor(x + 0.5)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._kernels import scatter_zbuffer

EPS_Z = 1e-6  # points with transformed depth <= EPS_Z are dropped


class DepthSource(enum.Enum):
    ESTIMATED = "estimated"
    PROCEDURAL = "procedural"


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixel units for a width x height grid."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 2 or self.height < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside the grid")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]], dtype=np.float64
        )

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float = 60.0) -> "CameraIntrinsics":
        """Square-pixel intrinsics with the given horizontal field of view."""
        f = width / (2.0 * math.tan(math.radians(fov_deg) / 2.0))
        return cls(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0, width=width, height=height)


@dataclass(frozen=True)
class CameraPose:
    """Relative rigid transform from current-camera to next-camera coordinates."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if np.max(np.abs(r.T @ r - np.eye(3))) >= 1e-6:
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(r) <= 0:
            raise ValueError("rotation must have determinant +1")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_euler(
        cls, yaw_deg: float, pitch_deg: float, roll_deg: float, translation=(0.0, 0.0, 0.0)
    ) -> "CameraPose":
        """Rotation composed as R = Ry(yaw) @ Rx(pitch) @ Rz(roll), angles in degrees."""
        y, p, r = (math.radians(a) for a in (yaw_deg, pitch_deg, roll_deg))
        ry = np.array(
            [[math.cos(y), 0, math.sin(y)], [0, 1, 0], [-math.sin(y), 0, math.cos(y)]]
        )
        rx = np.array(
            [[1, 0, 0], [0, math.cos(p), -math.sin(p)], [0, math.sin(p), math.cos(p)]]
        )
        rz = np.array(
            [[math.cos(r), -math.sin(r), 0], [math.sin(r), math.cos(r), 0], [0, 0, 1]]
        )
        return cls(ry @ rx @ rz, np.asarray(translation, dtype=np.float64))

    def is_identity(self, tol: float = 0.0) -> bool:
        return bool(
            np.max(np.abs(self.rotation - np.eye(3))) <= tol
            and np.max(np.abs(self.translation)) <= tol
        )


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel scene depth, strictly positive and finite."""

    values: np.ndarray
    source: DepthSource = DepthSource.ESTIMATED

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"depth must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("depth values must be finite and > 0")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


class Reprojection(NamedTuple):
    """Continuous target coordinates of every source pixel plus validity."""

    target_u: np.ndarray
    target_v: np.ndarray
    target_depth: np.ndarray
    valid: np.ndarray


@dataclass
class WarpResult:
    """Per-target-pixel source mapping produced by z-buffered forward warping.

    ``mapping`` is (H, W, 2) holding the winning source (u, v) per target
    pixel (NaN where no source landed); ``hole_mask`` is true exactly there.
    ``target_depth`` holds the winning depth, NaN at holes.
    """

    mapping: np.ndarray
    hole_mask: np.ndarray
    target_depth: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=np.float64)
        h = np.asarray(self.hole_mask, dtype=bool)
        if m.ndim != 3 or m.shape[2] != 2 or m.shape[:2] != h.shape:
            raise ValueError(f"mapping shape {m.shape} inconsistent with mask {h.shape}")
        if self.target_depth is None:
            d = np.where(h, np.nan, 0.0)
        else:
            d = np.asarray(self.target_depth, dtype=np.float64)
        present = np.all(np.isfinite(m), axis=2)
        if np.any(present == h):
            raise ValueError("hole_mask must be true exactly where mapping is absent")
        hh, ww = h.shape
        if present.any():
            mu, mv = m[present, 0], m[present, 1]
            if mu.min() < 0 or mu.max() > ww - 1 or mv.min() < 0 or mv.max() > hh - 1:
                raise ValueError("mapping coordinates fall outside the source grid")
        self.mapping, self.hole_mask, self.target_depth = m, h, d

    @property
    def shape(self) -> tuple[int, int]:
        return self.hole_mask.shape

    @property
    def hole_fraction(self) -> float:
        return float(self.hole_mask.mean())

    @classmethod
    def identity(cls, height: int, width: int) -> "WarpResult":
        u, v = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
        return cls(np.stack([u, v], axis=-1), np.zeros((height, width), dtype=bool))


def rescale_intrinsics(k: CameraIntrinsics, new_width: int, new_height: int) -> CameraIntrinsics:
    """Proportionally rescale intrinsics to a new grid size (e.g. image -> latent)."""
    if new_width < 2 or new_height < 2:
        raise ValueError(f"target size {new_width}x{new_height} is too small")
    sx = new_width / k.width
    sy = new_height / k.height
    return CameraIntrinsics(
        fx=k.fx * sx, fy=k.fy * sy, cx=k.cx * sx, cy=k.cy * sy, width=new_width, height=new_height
    )


def reproject(depth: DepthMap, k: CameraIntrinsics, pose: CameraPose) -> Reprojection:
    """Map every source pixel into the next view.

    Each pixel is unprojected with its depth, rigidly transformed, and
    re-projected through the same intrinsics.  Pixels whose transformed depth
    is <= EPS_Z are flagged invalid rather than raising.
    """
    h, w = depth.shape
    if (w, h) != (k.width, k.height):
        raise ValueError(f"depth {w}x{h} does not match intrinsics {k.width}x{k.height}")
    u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    d = depth.values
    rx = (u - k.cx) / k.fx
    ry = (v - k.cy) / k.fy
    r, t = pose.rotation, pose.translation
    xs = rx * d
    ys = ry * d
    xp = r[0, 0] * xs + r[0, 1] * ys + r[0, 2] * d + t[0]
    yp = r[1, 0] * xs + r[1, 1] * ys + r[1, 2] * d + t[1]
    zp = r[2, 0] * xs + r[2, 1] * ys + r[2, 2] * d + t[2]
    valid = zp > EPS_Z
    with np.errstate(divide="ignore", invalid="ignore"):
        tu = k.fx * (xp / zp) + k.cx
        tv = k.fy * (yp / zp) + k.cy
    return Reprojection(tu, tv, zp, valid)


def forward_warp(
    grid: np.ndarray, depth: DepthMap, k: CameraIntrinsics, pose: CameraPose
) -> tuple[np.ndarray, WarpResult]:
    """Scatter a (C, H, W) grid into the next view with z-buffer occlusion.

    Returns the warped grid (holes filled per :func:`fill_holes`) and the
    :class:`WarpResult` recording the winning source pixel per target, for
    reuse on key/value and feature grids.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 3 or grid.shape[1:] != depth.shape:
        raise ValueError(f"grid {grid.shape} does not match depth {depth.shape}")
    h, w = depth.shape
    rep = reproject(depth, k, pose)
    tu = np.floor(rep.target_u + 0.5)
    tv = np.floor(rep.target_v + 0.5)
    ok = rep.valid & np.isfinite(tu) & np.isfinite(tv)
    tu = np.where(ok, tu, -1).astype(np.int64)
    tv = np.where(ok, tv, -1).astype(np.int64)
    src_index = np.arange(h * w, dtype=np.int64)
    winner = scatter_zbuffer(
        tu.ravel(), tv.ravel(), rep.target_depth.ravel(), ok.ravel(), src_index, h, w
    )
    hit = winner >= 0
    out = np.zeros_like(grid)
    mapping = np.full((h, w, 2), np.nan)
    tdepth = np.full((h, w), np.nan)
    if hit.any():
        widx = winner[hit]
        out[:, hit] = grid.reshape(grid.shape[0], -1)[:, widx]
        mapping[hit, 0] = (widx % w).astype(np.float64)
        mapping[hit, 1] = (widx // w).astype(np.float64)
        tdepth[hit] = rep.target_depth.ravel()[widx]
    result = WarpResult(mapping, ~hit, tdepth)
    return fill_holes(out, result.hole_mask), result


def fill_holes(grid: np.ndarray, hole_mask: np.ndarray) -> np.ndarray:
    """Replace hole pixels with the per-channel mean of valid pixels (zeros if none)."""
    grid = np.asarray(grid, dtype=np.float64)
    hole_mask = np.asarray(hole_mask, dtype=bool)
    if grid.ndim != 3 or grid.shape[1:] != hole_mask.shape:
        raise ValueError(f"grid {grid.shape} does not match mask {hole_mask.shape}")
    if not hole_mask.any():
        return grid.copy()
    out = grid.copy()
    if hole_mask.all():
        out[:] = 0.0
        return out
    fill = grid[:, ~hole_mask].mean(axis=1)
    out[:, hole_mask] = fill[:, None]
    return out


def resample_warp(warp: WarpResult, new_height: int, new_width: int) -> WarpResult:
    """Nearest-neighbor resample a warp field to a grid of different resolution.

    Resolutions must be related by an integer factor in each axis (either
    direction).  Field samples are taken with a top-left stride convention
    and source coordinates are scaled proportionally, so an identity field
    downsamples to an identity field and even-pixel translations stay exact.
    """
    h, w = warp.shape
    if (new_height, new_width) == (h, w):
        return warp
    for new, old in ((new_height, h), (new_width, w)):
        if (new > old and new % old != 0) or (new < old and old % new != 0):
            raise ValueError(f"resolutions {old} -> {new} are not integer-related")
    rows = (np.arange(new_height) * h) // new_height
    cols = (np.arange(new_width) * w) // new_width
    mapping = warp.mapping[np.ix_(rows, cols)].copy()
    mapping[:, :, 0] *= new_width / w
    mapping[:, :, 1] *= new_height / h
    hole = warp.hole_mask[np.ix_(rows, cols)]
    depth = warp.target_depth[np.ix_(rows, cols)]
    return WarpResult(mapping, hole, depth)


def _bilinear_gather(grid: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample a (C, H, W) grid at continuous (u, v), clamping at the border."""
    _, h, w = grid.shape
    u0 = np.clip(np.floor(u).astype(np.int64), 0, w - 1)
    v0 = np.clip(np.floor(v).astype(np.int64), 0, h - 1)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = np.clip(u - u0, 0.0, 1.0)
    fv = np.clip(v - v0, 0.0, 1.0)
    g00 = grid[:, v0, u0]
    g01 = grid[:, v0, u1]
    g10 = grid[:, v1, u0]
    g11 = grid[:, v1, u1]
    top = g00 * (1 - fu) + g01 * fu
    bot = g10 * (1 - fu) + g11 * fu
    return top * (1 - fv) + bot * fv


def warp_with_result(grid: np.ndarray, warp: WarpResult) -> np.ndarray:
    """Apply a precomputed warp to another grid by bilinear gathering.

    The grid may live at a different (integer-factor) resolution than the
    warp field; the field is resampled first.  Holes are filled with the
    per-channel mean of the gathered pixels.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 3:
        raise ValueError(f"expected a (C, H, W) grid, got shape {grid.shape}")
    h, w = grid.shape[1:]
    warp = resample_warp(warp, h, w)
    out = np.zeros_like(grid)
    hit = ~warp.hole_mask
    if hit.any():
        out[:, hit] = _bilinear_gather(grid, warp.mapping[hit, 0], warp.mapping[hit, 1])
    return fill_holes(out, warp.hole_mask)


def downsample_depth(depth: DepthMap, new_h: int, new_w: int) -> DepthMap:
    """Average-pool a depth map down to a coarser resolution."""
    h, w = depth.shape
    if new_h > h or new_w > w:
        raise ValueError(f"cannot upsample depth {h}x{w} to {new_h}x{new_w}")
    if new_h < 1 or new_w < 1:
        raise ValueError("target size must be at least 1x1")
    if (new_h, new_w) == (h, w):
        return DepthMap(depth.values.copy(), depth.source)
    if h % new_h == 0 and w % new_w == 0:
        fh, fw = h // new_h, w // new_w
        pooled = depth.values.reshape(new_h, fh, new_w, fw).mean(axis=(1, 3))
    else:
        # Non-divisor sizes: adaptive windows covering the source exactly.
        pooled = np.empty((new_h, new_w))
        for i in range(new_h):
            r0, r1 = (i * h) // new_h, -(-(i + 1) * h // new_h)
            for j in range(new_w):
                c0, c1 = (j * w) // new_w, -(-(j + 1) * w // new_w)
                pooled[i, j] = depth.values[r0:r1, c0:c1].mean()
    return DepthMap(pooled, depth.source)
