"""Deterministic test backends.

All mocks are bit-deterministic given (seed, inputs) and stateless across
calls, so sessions replay exactly.  The linear denoiser supports analytic
vector-Jacobian products for gradient tests; the tiny attention denoiser
exercises real K/V capture and injection mechanics.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..attention import AttentionTensors, softmax_rows
from ..errors import ConfigurationError
from ..geometry import DepthMap, DepthSource
from . import (
    BackendSuite,
    DenoiserRequest,
    DenoiserResponse,
    TapRegistry,
    TapSite,
    TextEmbedding,
    validate_response,
)

_TIME_SCALE = 1000.0  # timestep embedding is t / 1000


def _text_seed(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


class LinearMockDenoiser:
    """eps = s * latent + c * (t / 1000), with seeded per-channel s in [0.5, 1.5].

    The feature tap mixes channels through a seeded square matrix so that
    gradients couple channels: f = M @ (s * latent) + c_f * (t / 1000).
    """

    FEATURE_TAP = "features"
    gradient_mode = "analytic"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.taps = TapRegistry(feature_sites=(TapSite(self.FEATURE_TAP, 1, None),))

    def _params(self, shape):
        c_ch, h, w = shape
        s = np.random.default_rng([self.seed, 1]).uniform(0.5, 1.5, size=c_ch)
        bias = np.random.default_rng([self.seed, 2, c_ch, h, w]).normal(0.0, 0.1, size=shape)
        mix = np.random.default_rng([self.seed, 3, c_ch]).normal(0.0, 1.0, size=(c_ch, c_ch))
        mix += np.eye(c_ch)  # keep the tap well-conditioned
        fbias = np.random.default_rng([self.seed, 4, c_ch, h, w]).normal(0.0, 0.1, size=shape)
        return s, bias, mix, fbias

    def _feature(self, latent, s, mix, fbias, t_emb):
        scaled = s[:, None, None] * latent
        return np.einsum("ck,khw->chw", mix, scaled) + fbias * t_emb

    def __call__(self, request: DenoiserRequest) -> DenoiserResponse:
        if request.injection is not None and request.injection.entries:
            raise ConfigurationError("linear mock has no attention sites to inject into")
        latent = request.latent
        s, bias, mix, fbias = self._params(latent.shape)
        t_emb = request.timestep / _TIME_SCALE
        eps = s[:, None, None] * latent + bias * t_emb
        features = {}
        for tap in request.capture:
            self.taps.require(tap)
            features[tap] = self._feature(latent, s, mix, fbias, t_emb)
        return validate_response(request, DenoiserResponse(eps=eps, captured_features=features))

    def tap_vjp(self, request: DenoiserRequest, tap_id: str, cotangent: np.ndarray) -> np.ndarray:
        self.taps.require(tap_id)
        s, _, mix, _ = self._params(request.latent.shape)
        # d f[c] / d latent[k] = mix[c, k] * s[k]
        pulled = np.einsum("ck,chw->khw", mix, np.asarray(cotangent, dtype=np.float64))
        return s[:, None, None] * pulled


def _conv3x3(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """'same' 3x3 convolution with zero padding; x is (C, H, W)."""
    c_out, c_in, _, _ = weights.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(1, 2))
    return np.einsum("oikl,ihwkl->ohw", weights, windows)


class TinyAttentionDenoiser:
    """conv -> single-head self-attention at half resolution -> conv.

    Untrained seeded weights; publishes the attention site for capture and
    injection and the post-attention grid as a feature tap.  Gradients are
    only available by finite differences.
    """

    ATTN_SITE = "attn0"
    FEATURE_TAP = "post_attn"
    ATTN_DIM = 8
    gradient_mode = "finite_difference"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.taps = TapRegistry(
            attention_sites=(TapSite(self.ATTN_SITE, 2, None),),
            feature_sites=(TapSite(self.FEATURE_TAP, 2, self.ATTN_DIM),),
        )

    def _weights(self, channels: int):
        rng = np.random.default_rng([self.seed, channels])
        d = self.ATTN_DIM
        scale = 1.0 / np.sqrt(9 * channels)
        return {
            "conv1": rng.normal(0.0, scale, size=(channels, channels, 3, 3)),
            "conv2": rng.normal(0.0, scale, size=(channels, channels, 3, 3)),
            "wq": rng.normal(0.0, 1.0 / np.sqrt(channels), size=(channels, d)),
            "wk": rng.normal(0.0, 1.0 / np.sqrt(channels), size=(channels, d)),
            "wv": rng.normal(0.0, 1.0 / np.sqrt(channels), size=(channels, d)),
            "wo": rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, channels)),
            "tbias": rng.normal(0.0, 0.1, size=(channels,)),
        }

    def __call__(self, request: DenoiserRequest) -> DenoiserResponse:
        latent = request.latent
        c, h, w = latent.shape
        if h % 2 or w % 2:
            raise ValueError(f"latent spatial dims must be even, got {h}x{w}")
        wts = self._weights(c)
        t_emb = request.timestep / _TIME_SCALE

        hidden = _conv3x3(latent, wts["conv1"]) + wts["tbias"][:, None, None] * t_emb
        pooled = hidden.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))
        tokens = pooled.reshape(c, -1).T  # (n, C) row-major over the half grid

        q = tokens @ wts["wq"]
        k = tokens @ wts["wk"]
        v = tokens @ wts["wv"]
        self_site = AttentionTensors(q, k, v, h // 2, w // 2, self.ATTN_SITE)

        k_used, v_used = k, v
        if request.injection is not None:
            entry = request.injection.get(self.ATTN_SITE)
            unknown = set(request.injection.entries) - {self.ATTN_SITE}
            if unknown:
                raise ConfigurationError(f"injection for unknown sites: {sorted(unknown)}")
            if entry is not None:
                if entry.k.shape != k.shape or entry.v.shape != v.shape:
                    raise ValueError("injected K/V shape does not match the site")
                k_used, v_used = entry.k, entry.v

        attn_out = softmax_rows(q @ k_used.T / np.sqrt(self.ATTN_DIM)) @ v_used  # (n, d)
        feature_grid = attn_out.T.reshape(self.ATTN_DIM, h // 2, w // 2)

        mixed = (attn_out @ wts["wo"]).T.reshape(c, h // 2, w // 2)
        upsampled = mixed.repeat(2, axis=1).repeat(2, axis=2)
        eps = _conv3x3(upsampled, wts["conv2"]) + 0.3 * latent

        captured_kv, captured_features = {}, {}
        for tap in request.capture:
            self.taps.require(tap)
            if tap == self.ATTN_SITE:
                captured_kv[tap] = self_site
            else:
                captured_features[tap] = feature_grid
        return validate_response(
            request, DenoiserResponse(eps=eps, captured_kv=captured_kv,
                                      captured_features=captured_features))

    def tap_vjp(self, request, tap_id, cotangent):
        raise ConfigurationError("tiny attention denoiser has no analytic gradients; "
                                 "use finite differences")


class ProceduralDepthEstimator:
    """Ground plane (nearer at the bottom) plus 1-3 seeded frontal boxes.

    Ignores image content; depends only on the image shape and the seed, so
    repeated calls are identical.
    """

    NEAR = 2.0
    FAR = 20.0

    def __init__(self, scene_seed: int):
        self.scene_seed = int(scene_seed)

    def __call__(self, image: np.ndarray) -> DepthMap:
        h, w = image.shape[:2]
        rng = np.random.default_rng(self.scene_seed)
        rows = np.arange(h, dtype=np.float64)
        plane = self.FAR + (self.NEAR - self.FAR) * rows / max(h - 1, 1)
        depth = np.tile(plane[:, None], (1, w))
        for _ in range(int(rng.integers(1, 4))):
            bh = max(2, int(h * rng.uniform(0.1, 0.3)))
            bw = max(2, int(w * rng.uniform(0.1, 0.3)))
            r0 = int(rng.integers(0, max(h - bh, 1)))
            c0 = int(rng.integers(0, max(w - bw, 1)))
            local = depth[r0:r0 + bh, c0:c0 + bw]
            box_depth = max(1.0, float(local.min()) * rng.uniform(0.3, 0.7))
            depth[r0:r0 + bh, c0:c0 + bw] = np.minimum(local, box_depth)
        return DepthMap(np.clip(depth, 1.0, 100.0), DepthSource.PROCEDURAL)


@dataclass
class MockAutoencoder:
    """Shape-faithful image <-> latent codec.

    With ``factor=1`` the round trip is exact (RGB mapped affinely into the
    first three channels); larger factors block-average on encode and
    nearest-upsample on decode, which is lossy on non-smooth images.
    """

    channels: int = 4
    factor: int = 1

    def __post_init__(self):
        if self.channels < 3:
            raise ValueError("need at least 3 latent channels to carry RGB")

    def encode(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
        h, w = image.shape[:2]
        if h % self.factor or w % self.factor:
            raise ValueError(f"image {h}x{w} not divisible by factor {self.factor}")
        f = self.factor
        pooled = image.reshape(h // f, f, w // f, f, 3).mean(axis=(1, 3))
        latent = np.zeros((self.channels, h // f, w // f))
        latent[:3] = 2.0 * pooled.transpose(2, 0, 1) - 1.0
        if self.channels > 3:
            latent[3:] = 2.0 * pooled.mean(axis=2) - 1.0
        return latent

    def decode(self, latent: np.ndarray) -> np.ndarray:
        latent = np.asarray(latent, dtype=np.float64)
        if latent.ndim != 3 or latent.shape[0] != self.channels:
            raise ValueError(f"expected ({self.channels}, h, w) latent, got {latent.shape}")
        rgb = np.clip((latent[:3] + 1.0) / 2.0, 0.0, 1.0)
        rgb = rgb.repeat(self.factor, axis=1).repeat(self.factor, axis=2)
        return rgb.transpose(1, 2, 0)


class MockTextEncoder:
    def __call__(self, text: str) -> TextEmbedding:
        vec = np.random.default_rng(_text_seed(text)).normal(size=32)
        return TextEmbedding(vector=vec, source_text=text)


def linear_mock_denoiser(seed: int) -> LinearMockDenoiser:
    return LinearMockDenoiser(seed)


def tiny_attention_denoiser(seed: int) -> TinyAttentionDenoiser:
    return TinyAttentionDenoiser(seed)


def procedural_depth(scene_seed: int) -> ProceduralDepthEstimator:
    return ProceduralDepthEstimator(scene_seed)


def mock_suite(
    seed: int = 0,
    denoiser: str = "linear",
    channels: int = 4,
    autoencoder_factor: int = 1,
) -> BackendSuite:
    """Assemble a fully deterministic desk-scale backend suite."""
    if denoiser == "linear":
        net = LinearMockDenoiser(seed)
    elif denoiser == "tiny_attention":
        net = TinyAttentionDenoiser(seed)
    else:
        raise ValueError(f"unknown mock denoiser {denoiser!r}")
    return BackendSuite(
        denoiser=net,
        autoencoder=MockAutoencoder(channels=channels, factor=autoencoder_factor),
        depth_estimator=ProceduralDepthEstimator(seed),
        text_encoder=MockTextEncoder(),
    )
