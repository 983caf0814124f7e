"""Model contracts: denoiser, autoencoder, depth estimator, text encoder.

Every backend is pluggable.  The mocks in :mod:`.mocks` are deterministic
and cheap enough for property tests; :mod:`.pretrained` adapts a real
latent diffusion model and a monocular depth network behind the same
contracts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from ..attention import AttentionTensors, InjectionPlan
from ..errors import ConfigurationError
from ..geometry import DepthMap


@dataclass(frozen=True)
class TextEmbedding:
    """Opaque conditioning handle; mocks only need determinism per text."""

    vector: np.ndarray
    source_text: str


@dataclass(frozen=True)
class TapSite:
    """One observable location inside a denoiser.

    ``downscale`` relates the site's grid to the latent resolution (a site at
    half resolution has downscale 2); ``channels`` is set for feature sites.
    """

    site_id: str
    downscale: int
    channels: int | None = None


@dataclass(frozen=True)
class TapRegistry:
    attention_sites: tuple[TapSite, ...] = ()
    feature_sites: tuple[TapSite, ...] = ()

    def attention_ids(self) -> tuple[str, ...]:
        return tuple(s.site_id for s in self.attention_sites)

    def feature_ids(self) -> tuple[str, ...]:
        return tuple(s.site_id for s in self.feature_sites)

    def require(self, site_id: str) -> TapSite:
        for site in self.attention_sites + self.feature_sites:
            if site.site_id == site_id:
                return site
        raise ConfigurationError(f"unknown tap id {site_id!r}; available: "
                                 f"{self.attention_ids() + self.feature_ids()}")


@dataclass(frozen=True)
class DenoiserRequest:
    latent: np.ndarray
    timestep: int
    text_embedding: TextEmbedding | None = None
    injection: InjectionPlan | None = None
    capture: frozenset[str] = frozenset()
    guidance_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "latent", np.asarray(self.latent, dtype=np.float64))
        object.__setattr__(self, "capture", frozenset(self.capture))
        if self.timestep < 1:
            raise ValueError(f"timestep must be >= 1, got {self.timestep}")
        if self.guidance_scale < 0:
            raise ValueError("guidance_scale must be >= 0")


@dataclass(frozen=True)
class DenoiserResponse:
    eps: np.ndarray
    captured_kv: dict[str, AttentionTensors] = field(default_factory=dict)
    captured_features: dict[str, np.ndarray] = field(default_factory=dict)


def validate_response(request: DenoiserRequest, response: DenoiserResponse) -> DenoiserResponse:
    """Fail loudly if a requested tap is silently missing from a response."""
    if response.eps.shape != request.latent.shape:
        raise ConfigurationError(
            f"denoiser returned eps {response.eps.shape} for latent {request.latent.shape}")
    missing = request.capture - set(response.captured_kv) - set(response.captured_features)
    if missing:
        raise ConfigurationError(f"denoiser response missing requested taps: {sorted(missing)}")
    return response


@runtime_checkable
class Denoiser(Protocol):
    taps: TapRegistry
    gradient_mode: str  # "analytic" or "finite_difference"

    def __call__(self, request: DenoiserRequest) -> DenoiserResponse: ...

    def tap_vjp(self, request: DenoiserRequest, tap_id: str, cotangent: np.ndarray) -> np.ndarray:
        """Pull a cotangent at a feature tap back to the latent (analytic mode only)."""
        ...


class Autoencoder(Protocol):
    def encode(self, image: np.ndarray) -> np.ndarray: ...

    def decode(self, latent: np.ndarray) -> np.ndarray: ...


class DepthEstimator(Protocol):
    def __call__(self, image: np.ndarray) -> DepthMap: ...


class TextEncoder(Protocol):
    def __call__(self, text: str) -> TextEmbedding: ...


@dataclass
class BackendSuite:
    """Everything one session needs to run."""

    denoiser: Denoiser
    autoencoder: Autoencoder
    depth_estimator: DepthEstimator
    text_encoder: TextEncoder

    @property
    def gradient_mode(self) -> str:
        return self.denoiser.gradient_mode


from .mocks import (  # noqa: E402  (re-export for convenience)
    LinearMockDenoiser,
    MockAutoencoder,
    MockTextEncoder,
    ProceduralDepthEstimator,
    TinyAttentionDenoiser,
    linear_mock_denoiser,
    mock_suite,
    procedural_depth,
    tiny_attention_denoiser,
)

__all__ = [
    "TextEmbedding", "TapSite", "TapRegistry", "DenoiserRequest", "DenoiserResponse",
    "validate_response", "Denoiser", "Autoencoder", "DepthEstimator", "TextEncoder",
    "BackendSuite", "LinearMockDenoiser", "TinyAttentionDenoiser", "MockAutoencoder",
    "MockTextEncoder", "ProceduralDepthEstimator", "linear_mock_denoiser",
    "tiny_attention_denoiser", "procedural_depth", "mock_suite",
]
