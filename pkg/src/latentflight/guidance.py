"""Feature-correspondence loss and its gradient w.r.t. the next-view latent.

The loss compares the warped current-view feature grid against the
next-view feature grid by per-location cosine similarity, averaged over
locations that survived the warp.  The gradient steers the next-view
sampling only; current-view features are constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import InjectionPlan
from .backends import Denoiser, DenoiserRequest, TextEmbedding
from .errors import ConfigurationError, DegenerateInputError

_COS_EPS = 1e-8


@dataclass(frozen=True)
class FeaturePair:
    """Warped reference features, candidate features, and the non-hole mask."""

    f_current_warped: np.ndarray
    f_next: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.f_current_warped, dtype=np.float64)
        b = np.asarray(self.f_next, dtype=np.float64)
        m = np.asarray(self.valid_mask, dtype=bool)
        if a.shape != b.shape:
            raise ValueError(f"feature shapes differ: {a.shape} vs {b.shape}")
        if m.shape != a.shape[1:]:
            raise ValueError(f"mask {m.shape} does not match feature grid {a.shape[1:]}")
        object.__setattr__(self, "f_current_warped", a)
        object.__setattr__(self, "f_next", b)
        object.__setattr__(self, "valid_mask", m)


@dataclass(frozen=True)
class DenoiseContext:
    """Conditions under which the denoiser is evaluated for guidance."""

    text_embedding: TextEmbedding | None = None
    guidance_scale: float = 1.0
    injection: InjectionPlan | None = None
    feature_tap: str | None = None  # None = the denoiser's first feature site


def _included(pair: FeaturePair) -> np.ndarray:
    norm_a = np.linalg.norm(pair.f_current_warped, axis=0)
    norm_b = np.linalg.norm(pair.f_next, axis=0)
    return pair.valid_mask & (norm_a > 0) & (norm_b > 0)


def feature_similarity_loss(pair: FeaturePair) -> float:
    """Mean (1 - cos) / 2 over valid, nonzero feature locations; range [0, 1]."""
    if not pair.valid_mask.any():
        raise DegenerateInputError("no valid locations to compare features at")
    use = _included(pair)
    if not use.any():
        raise DegenerateInputError("all valid locations have zero-norm features")
    a = pair.f_current_warped[:, use]
    b = pair.f_next[:, use]
    denom = np.maximum(np.linalg.norm(a, axis=0) * np.linalg.norm(b, axis=0), _COS_EPS)
    cos = np.clip((a * b).sum(axis=0) / denom, -1.0, 1.0)
    return float(np.mean((1.0 - cos) / 2.0))


def _loss_cotangent(pair: FeaturePair) -> np.ndarray:
    """d loss / d f_next, zero at excluded locations."""
    use = _included(pair)
    a = pair.f_current_warped[:, use]
    b = pair.f_next[:, use]
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    denom = np.maximum(na * nb, _COS_EPS)
    cos = (a * b).sum(axis=0) / denom
    dcos_db = a / denom - cos * b / np.maximum(nb**2, _COS_EPS)
    grad = np.zeros_like(pair.f_next)
    grad[:, use] = -dcos_db / (2.0 * use.sum())
    return grad


def _resolve_tap(denoiser: Denoiser, context: DenoiseContext) -> str:
    if context.feature_tap is not None:
        denoiser.taps.require(context.feature_tap)
        return context.feature_tap
    sites = denoiser.taps.feature_sites
    if not sites:
        raise ConfigurationError("denoiser publishes no feature taps")
    return sites[0].site_id


def _request(context: DenoiseContext, latent: np.ndarray, t: int, tap: str) -> DenoiserRequest:
    return DenoiserRequest(
        latent=latent,
        timestep=t,
        text_embedding=context.text_embedding,
        injection=context.injection,
        capture=frozenset({tap}),
        guidance_scale=context.guidance_scale,
    )


def similarity_gradient(
    denoiser: Denoiser,
    x_next: np.ndarray,
    t: int,
    context: DenoiseContext,
    f_current_warped: np.ndarray,
    valid_mask: np.ndarray,
) -> np.ndarray:
    """Gradient of the correspondence loss w.r.t. the next-view latent.

    Uses the denoiser's analytic vector-Jacobian product when available,
    otherwise exact central finite differences (intended for small grids;
    cost is two denoiser calls per latent coordinate).
    """
    x_next = np.asarray(x_next, dtype=np.float64)
    tap = _resolve_tap(denoiser, context)

    def loss_at(x: np.ndarray) -> float:
        response = denoiser(_request(context, x, t, tap))
        pair = FeaturePair(f_current_warped, response.captured_features[tap], valid_mask)
        return feature_similarity_loss(pair)

    if denoiser.gradient_mode == "analytic":
        response = denoiser(_request(context, x_next, t, tap))
        pair = FeaturePair(f_current_warped, response.captured_features[tap], valid_mask)
        cot = _loss_cotangent(pair)
        return denoiser.tap_vjp(_request(context, x_next, t, tap), tap, cot)

    grad = np.zeros_like(x_next)
    flat = x_next.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        h = 1e-3 * (1.0 + abs(flat[i]))
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        up = loss_at(bumped.reshape(x_next.shape))
        bumped[i] = flat[i] - h
        down = loss_at(bumped.reshape(x_next.shape))
        gflat[i] = (up - down) / (2.0 * h)
    return grad
