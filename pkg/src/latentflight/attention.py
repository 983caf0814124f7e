"""Reference self-attention and the cross-view key/value substitution.

Tokens are rows of (n, dim) arrays laid out row-major over an (h, w) grid.
Scores are scaled by 1/sqrt(dim) to match pretrained backbones, and the
injected path must use the same numerics as the plain path, so the scaling
is applied everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .geometry import WarpResult


@dataclass(frozen=True)
class KVPair:
    """Keys and values for one attention site, with their spatial layout."""

    k: np.ndarray
    v: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        k = np.asarray(self.k, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if k.shape[0] != v.shape[0]:
            raise ValueError("K and V must have the same token count")
        if k.shape[0] != self.height * self.width:
            raise ValueError(f"{k.shape[0]} tokens do not tile {self.height}x{self.width}")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "v", v)


@dataclass(frozen=True)
class AttentionTensors:
    """Q/K/V of one self-attention site plus its grid layout."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    height: int
    width: int
    site_id: str

    def __post_init__(self):
        q, k, v = (np.asarray(a, dtype=np.float64) for a in (self.q, self.k, self.v))
        if q.shape[1] != k.shape[1]:
            raise ValueError("Q and K must share the feature dimension")
        if k.shape[0] != v.shape[0]:
            raise ValueError("K and V must have the same token count")
        if q.shape[0] != self.height * self.width:
            raise ValueError(f"{q.shape[0]} tokens do not tile {self.height}x{self.width}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "v", v)

    def kv(self) -> KVPair:
        return KVPair(self.k, self.v, self.height, self.width)


@dataclass(frozen=True)
class InjectionPlan:
    """Replacement K/V per attention site, already warped to each site's layout."""

    entries: dict[str, KVPair] = field(default_factory=dict)

    def get(self, site_id: str) -> KVPair | None:
        return self.entries.get(site_id)


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Scaled dot-product attention, softmax over key rows."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ValueError("q, k, v must be 2-D token arrays")
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"dim mismatch: q has {q.shape[1]}, k has {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"token mismatch: k has {k.shape[0]}, v has {v.shape[0]}")
    weights = softmax_rows(q @ k.T / np.sqrt(q.shape[1]))
    return weights @ v


def cross_view_attention(q_next: np.ndarray, plan_entry: KVPair | None) -> np.ndarray:
    """Attend with this view's queries over another view's injected keys/values."""
    if plan_entry is None:
        raise ValueError("missing injection plan entry for this site")
    return attention(q_next, plan_entry.k, plan_entry.v)


def warp_kv(tensors: AttentionTensors, warp: WarpResult) -> KVPair:
    """Spatially warp a site's K and V grids with a precomputed warp field."""
    warped = []
    for tokens in (tensors.k, tensors.v):
        grid = tokens.reshape(tensors.height, tensors.width, -1).transpose(2, 0, 1)
        moved = geometry.warp_with_result(grid, warp)
        warped.append(moved.transpose(1, 2, 0).reshape(tokens.shape))
    return KVPair(warped[0], warped[1], tensors.height, tensors.width)
