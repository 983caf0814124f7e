"""Adapters wrapping a pretrained latent diffusion model and a depth network.

Everything here needs local model artifacts (a Stable Diffusion 2.1-style
directory and MiDaS weights) plus torch; imports are deferred so the rest
of the package works without them.  Missing artifacts raise
:class:`ConfigurationError` naming the missing path.

Adapter configuration is a JSON key-value file::

    {
      "diffusion_dir": "/models/sd21-base",
      "depth_weights": "/models/dpt_beit_large_512.pt",
      "device": "cuda",
      "feature_tap": "decoder.mid",
      "injection_sites": null,          // null = every decoder self-attention
      "guidance_scale": 7.5,
      "disparity_a": 1.0,
      "disparity_b": 0.01,
      "depth_clamp": [0.5, 100.0]
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..attention import AttentionTensors
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


@dataclass
class AdapterConfig:
    diffusion_dir: str
    depth_weights: str
    device: str = "cuda"
    feature_tap: str = "decoder.mid"
    injection_sites: list[str] | None = None
    guidance_scale: float = 7.5
    disparity_a: float = 1.0
    disparity_b: float = 0.01
    depth_clamp: tuple[float, float] = (0.5, 100.0)
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path) -> "AdapterConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"adapter config file not found: {path}")
        data = json.loads(path.read_text(encoding="utf-8"))
        known = {"diffusion_dir", "depth_weights", "device", "feature_tap",
                 "injection_sites", "guidance_scale", "disparity_a", "disparity_b",
                 "depth_clamp"}
        kwargs = {k: v for k, v in data.items() if k in known}
        extras = {k: v for k, v in data.items() if k not in known}
        if "depth_clamp" in kwargs:
            kwargs["depth_clamp"] = tuple(kwargs["depth_clamp"])
        missing = {"diffusion_dir", "depth_weights"} - set(kwargs)
        if missing:
            raise ConfigurationError(f"adapter config missing keys: {sorted(missing)}")
        return cls(extras=extras, **kwargs)


def adapter_config_from_env(path: str | None) -> AdapterConfig:
    if not path:
        raise ConfigurationError(
            "no adapter config: set LATENTFLIGHT_ADAPTER_CONFIG to a JSON file path")
    return AdapterConfig.from_file(path)


def disparity_to_depth(disparity: np.ndarray, a: float, b: float,
                       clamp: tuple[float, float]) -> np.ndarray:
    """Monocular nets emit relative inverse depth; map it to warpable units.

    The disparity map is min-max normalized, inverted through
    ``1 / (a * d + b)``, and clamped, so nearer content keeps smaller depth.
    """
    d = np.asarray(disparity, dtype=np.float64)
    span = d.max() - d.min()
    norm = (d - d.min()) / span if span > 0 else np.zeros_like(d)
    depth = 1.0 / (a * norm + b)
    return np.clip(depth, *clamp)


def _require_torch():
    try:
        import torch  # noqa: F401

        return torch
    except ImportError as exc:
        raise ConfigurationError(
            "pretrained adapters need torch; install the 'pretrained' extra") from exc


class _CaptureInjectProcessor:
    """Attention processor that records K/V and substitutes injected ones."""

    def __init__(self, site_id: str, state: dict):
        self.site_id = site_id
        self.state = state

    def __call__(self, attn, hidden_states, encoder_hidden_states=None,
                 attention_mask=None, **kwargs):
        import torch

        residual = hidden_states
        is_self = encoder_hidden_states is None
        context = hidden_states if is_self else encoder_hidden_states
        q = attn.to_q(hidden_states)
        k = attn.to_k(context)
        v = attn.to_v(context)

        if is_self:
            capture = self.state.get("capture")
            if capture is not None and self.site_id in capture:
                n = q.shape[1]
                side = int(round(n**0.5))
                self.state["captured_kv"][self.site_id] = AttentionTensors(
                    q[0].detach().float().cpu().numpy(),
                    k[0].detach().float().cpu().numpy(),
                    v[0].detach().float().cpu().numpy(),
                    side, side, self.site_id)
            injection = self.state.get("injection")
            if injection is not None:
                entry = injection.get(self.site_id)
                if entry is not None:
                    k = torch.as_tensor(entry.k, dtype=k.dtype, device=k.device)
                    k = k.unsqueeze(0).expand(q.shape[0], -1, -1)
                    v = torch.as_tensor(entry.v, dtype=v.dtype, device=v.device)
                    v = v.unsqueeze(0).expand(q.shape[0], -1, -1)

        q = attn.head_to_batch_dim(q)
        k = attn.head_to_batch_dim(k)
        v = attn.head_to_batch_dim(v)
        weights = attn.get_attention_scores(q, k, attention_mask)
        out = attn.batch_to_head_dim(torch.bmm(weights, v))
        out = attn.to_out[0](out)
        out = attn.to_out[1](out)
        if attn.residual_connection:
            out = out + residual
        return out


class PretrainedDenoiser:
    gradient_mode = "finite_difference"

    def __init__(self, pipe, config: AdapterConfig):
        self.pipe = pipe
        self.config = config
        self._state: dict = {}
        self._sites = self._install_processors()
        latent_side = pipe.unet.config.sample_size
        attention_sites = tuple(
            TapSite(sid, max(1, latent_side // side)) for sid, side in self._sites)
        self.taps = TapRegistry(
            attention_sites=attention_sites,
            feature_sites=(TapSite(config.feature_tap, 2,
                                   pipe.unet.config.block_out_channels[-2]),),
        )

    def _install_processors(self):
        sites = []
        procs = {}
        for name, proc in self.pipe.unet.attn_processors.items():
            if name.startswith("up_blocks") and name.endswith("attn1.processor"):
                site_id = name.removesuffix(".processor")
                procs[name] = _CaptureInjectProcessor(site_id, self._state)
                sites.append((site_id, None))
            else:
                procs[name] = proc
        self.pipe.unet.set_attn_processor(procs)
        # resolutions are discovered on the first forward pass
        return sites

    def __call__(self, request: DenoiserRequest) -> DenoiserResponse:
        torch = _require_torch()
        unet = self.pipe.unet
        device = next(unet.parameters()).device
        latent = torch.as_tensor(request.latent, dtype=unet.dtype, device=device)[None]
        embedding = torch.as_tensor(request.text_embedding.vector, dtype=unet.dtype,
                                    device=device)
        t = torch.tensor([request.timestep - 1], device=device)

        self._state.clear()
        self._state.update({
            "capture": set(request.capture),
            "captured_kv": {},
            "injection": request.injection,
        })
        features: dict = {}
        hooks = []
        if self.config.feature_tap in request.capture:
            block = unet.up_blocks[len(unet.up_blocks) // 2]

            def hook(_module, _inputs, output):
                features[self.config.feature_tap] = (
                    output[0].detach().float().cpu().numpy())

            hooks.append(block.register_forward_hook(hook))
        try:
            with torch.no_grad():
                if request.guidance_scale > 1.0:
                    uncond = torch.zeros_like(embedding)
                    both = torch.cat([latent, latent])
                    emb = torch.stack([uncond, embedding[0] if embedding.ndim == 3
                                       else embedding])
                    eps_u, eps_c = unet(both, t.repeat(2),
                                        encoder_hidden_states=emb).sample.chunk(2)
                    eps = eps_u + request.guidance_scale * (eps_c - eps_u)
                else:
                    eps = unet(latent, t, encoder_hidden_states=embedding[None]
                               if embedding.ndim == 2 else embedding).sample
        finally:
            for h in hooks:
                h.remove()
        response = DenoiserResponse(
            eps=eps[0].float().cpu().numpy().astype(np.float64),
            captured_kv=dict(self._state["captured_kv"]),
            captured_features=features,
        )
        return validate_response(request, response)

    def tap_vjp(self, request, tap_id, cotangent):
        raise ConfigurationError("pretrained denoiser exposes finite-difference "
                                 "gradients only")


class PretrainedAutoencoder:
    def __init__(self, pipe):
        self.pipe = pipe

    def encode(self, image: np.ndarray) -> np.ndarray:
        torch = _require_torch()
        vae = self.pipe.vae
        device = next(vae.parameters()).device
        x = torch.as_tensor(image * 2.0 - 1.0, dtype=vae.dtype, device=device)
        x = x.permute(2, 0, 1)[None]
        with torch.no_grad():
            latent = vae.encode(x).latent_dist.mean * vae.config.scaling_factor
        return latent[0].float().cpu().numpy().astype(np.float64)

    def decode(self, latent: np.ndarray) -> np.ndarray:
        torch = _require_torch()
        vae = self.pipe.vae
        device = next(vae.parameters()).device
        z = torch.as_tensor(latent, dtype=vae.dtype, device=device)[None]
        with torch.no_grad():
            img = vae.decode(z / vae.config.scaling_factor).sample
        img = (img[0].permute(1, 2, 0).float().cpu().numpy() + 1.0) / 2.0
        return np.clip(img, 0.0, 1.0)


class PretrainedDepthEstimator:
    def __init__(self, model, transform, config: AdapterConfig):
        self.model = model
        self.transform = transform
        self.config = config

    def __call__(self, image: np.ndarray) -> DepthMap:
        torch = _require_torch()
        device = next(self.model.parameters()).device
        batch = self.transform({"image": image.astype(np.float32)})["image"]
        with torch.no_grad():
            disparity = self.model(torch.as_tensor(batch, device=device)[None])
            disparity = torch.nn.functional.interpolate(
                disparity[None], size=image.shape[:2], mode="bicubic",
                align_corners=False)[0, 0].cpu().numpy()
        depth = disparity_to_depth(disparity, self.config.disparity_a,
                                   self.config.disparity_b, self.config.depth_clamp)
        return DepthMap(depth, DepthSource.ESTIMATED)


class PretrainedTextEncoder:
    def __init__(self, pipe):
        self.pipe = pipe

    def __call__(self, text: str) -> TextEmbedding:
        torch = _require_torch()
        tokens = self.pipe.tokenizer(
            text, padding="max_length", max_length=self.pipe.tokenizer.model_max_length,
            truncation=True, return_tensors="pt")
        device = next(self.pipe.text_encoder.parameters()).device
        with torch.no_grad():
            emb = self.pipe.text_encoder(tokens.input_ids.to(device))[0]
        return TextEmbedding(vector=emb[0].float().cpu().numpy(), source_text=text)


def pretrained_adapters(config: AdapterConfig) -> BackendSuite:
    """Load the diffusion and depth adapters named in the config."""
    _require_torch()
    diffusion_dir = Path(config.diffusion_dir)
    if not diffusion_dir.exists():
        raise ConfigurationError(f"diffusion model directory not found: {diffusion_dir}")
    depth_weights = Path(config.depth_weights)
    if not depth_weights.exists():
        raise ConfigurationError(f"depth weights not found: {depth_weights}")
    try:
        from diffusers import StableDiffusionPipeline
    except ImportError as exc:
        raise ConfigurationError(
            "pretrained adapters need diffusers; install the 'pretrained' extra") from exc

    pipe = StableDiffusionPipeline.from_pretrained(str(diffusion_dir),
                                                   safety_checker=None)
    pipe = pipe.to(config.device)

    import torch

    midas = torch.hub.load("intel-isl/MiDaS", "DPT_BEiT_L_512", source="local",
                           pretrained=False)
    midas.load_state_dict(torch.load(depth_weights, map_location=config.device))
    midas.to(config.device).eval()
    transforms = torch.hub.load("intel-isl/MiDaS", "transforms", source="local")
    return BackendSuite(
        denoiser=PretrainedDenoiser(pipe, config),
        autoencoder=PretrainedAutoencoder(pipe),
        depth_estimator=PretrainedDepthEstimator(midas, transforms.beit512_transform,
                                                 config),
        text_encoder=PretrainedTextEncoder(pipe),
    )
