"""On-disk session records and config/image serialization.

Layout of a record directory:

    frames/000000.png ...   lossless frames; 000000 is the starting frame,
                            so there is always one more frame than log entries
    trajectory.json         replayable step log (pose / prompt / overrides)
    config.json             immutable snapshot: pipeline config + source
    latents/000001.f32 ...  optional raw little-endian float32 dumps with a
                            JSON sidecar declaring shape and channel order
"""

from __future__ import annotations

import base64
import dataclasses
import io
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .pipeline import PipelineConfig
from .trajectory import TrajectoryEntry, entry_from_dict, entry_to_dict

_INF_KEYS = {"sigma"}


def image_to_png_bytes(image: np.ndarray) -> bytes:
    arr = np.round(np.clip(np.asarray(image), 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_image(data: bytes) -> np.ndarray:
    arr = np.asarray(Image.open(io.BytesIO(data)).convert("RGB"), dtype=np.float64)
    return arr / 255.0


def image_to_base64(image: np.ndarray) -> str:
    return base64.b64encode(image_to_png_bytes(image)).decode("ascii")


def base64_to_image(data: str) -> np.ndarray:
    return png_bytes_to_image(base64.b64decode(data))


def config_to_dict(config: PipelineConfig) -> dict:
    out = dataclasses.asdict(config)
    for key in _INF_KEYS:
        if out[key] == float("inf"):
            out[key] = "inf"
    out["latent_shape"] = list(config.latent_shape)
    if config.injection_sites is not None:
        out["injection_sites"] = list(config.injection_sites)
    return out


def config_from_dict(data: dict) -> PipelineConfig:
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    kwargs = {}
    for key, value in data.items():
        name = {"lambda": "guidance_lambda"}.get(key, key)
        if name not in known:
            raise ValueError(f"unknown config key {key!r}")
        if name in _INF_KEYS and isinstance(value, str):
            if value.lower() not in ("inf", "infinity"):
                raise ValueError(f"bad value for {key!r}: {value!r}")
            value = float("inf")
        if name == "latent_shape":
            value = tuple(value)
        if name == "injection_sites" and value is not None:
            value = tuple(value)
        kwargs[name] = value
    return PipelineConfig(**kwargs)


class SessionRecord:
    """Writer/reader for one session's directory; config is written once."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.frames_dir = self.root / "frames"
        self.latents_dir = self.root / "latents"
        self.trajectory_path = self.root / "trajectory.json"
        self.config_path = self.root / "config.json"

    @classmethod
    def create(cls, root, config: PipelineConfig, source: dict, backend: str) -> "SessionRecord":
        rec = cls(root)
        rec.frames_dir.mkdir(parents=True, exist_ok=True)
        if rec.config_path.exists():
            raise ValueError(f"record already exists at {rec.root}")
        snapshot = {"backend": backend, "source": source, "config": config_to_dict(config)}
        rec.config_path.write_text(json.dumps(snapshot, indent=2) + "\n", encoding="utf-8")
        rec.trajectory_path.write_text("[]\n", encoding="utf-8")
        return rec

    def frame_path(self, index: int) -> Path:
        return self.frames_dir / f"{index:06d}.png"

    def write_frame(self, index: int, image: np.ndarray) -> Path:
        path = self.frame_path(index)
        path.write_bytes(image_to_png_bytes(image))
        return path

    def read_frame(self, index: int) -> np.ndarray:
        return png_bytes_to_image(self.frame_path(index).read_bytes())

    def frame_count(self) -> int:
        if not self.frames_dir.is_dir():
            return 0
        return len(list(self.frames_dir.glob("*.png")))

    def append_log(self, entry: TrajectoryEntry, info: dict | None = None) -> None:
        log = json.loads(self.trajectory_path.read_text(encoding="utf-8"))
        obj = entry_to_dict(entry)
        if info:
            obj["info"] = info
        log.append(obj)
        self.trajectory_path.write_text(json.dumps(log, indent=2) + "\n", encoding="utf-8")

    def load_log(self) -> list[dict]:
        return json.loads(self.trajectory_path.read_text(encoding="utf-8"))

    def load_entries(self) -> list[TrajectoryEntry]:
        entries = []
        for obj in self.load_log():
            obj = {k: v for k, v in obj.items() if k != "info"}
            entries.append(entry_from_dict(obj))
        return entries

    def load_snapshot(self) -> dict:
        return json.loads(self.config_path.read_text(encoding="utf-8"))

    def write_latent(self, index: int, latent: np.ndarray) -> Path:
        self.latents_dir.mkdir(parents=True, exist_ok=True)
        latent = np.ascontiguousarray(latent, dtype="<f4")
        path = self.latents_dir / f"{index:06d}.f32"
        path.write_bytes(latent.tobytes())
        sidecar = {"shape": list(latent.shape), "dtype": "<f4", "order": "channels_first"}
        path.with_suffix(".json").write_text(json.dumps(sidecar) + "\n", encoding="utf-8")
        return path

    def read_latent(self, index: int) -> np.ndarray:
        path = self.latents_dir / f"{index:06d}.f32"
        sidecar = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
        flat = np.frombuffer(path.read_bytes(), dtype=sidecar["dtype"])
        return flat.reshape(sidecar["shape"]).astype(np.float64)
