"""Trajectory file schema: a JSON list of relative camera moves.

Each entry carries exactly one of ``rotation`` (9 numbers, row-major) or
``euler`` ([yaw, pitch, roll] in degrees), a 3-vector ``translation``, and
optionally a ``prompt`` (scene shuttle) and per-step ``overrides``
(sigma / lambda / t2 for that step only).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import CameraPose

OVERRIDE_KEYS = {"sigma", "lambda", "t2"}


@dataclass(frozen=True)
class TrajectoryEntry:
    pose: CameraPose
    prompt: str | None = None
    overrides: dict | None = None


def entry_from_dict(obj: dict) -> TrajectoryEntry:
    if not isinstance(obj, dict):
        raise ValueError(f"trajectory entry must be an object, got {type(obj).__name__}")
    has_rot = "rotation" in obj
    has_euler = "euler" in obj
    if has_rot == has_euler:
        raise ValueError("entry must carry exactly one of 'rotation' or 'euler'")
    translation = obj.get("translation")
    if translation is None or len(translation) != 3:
        raise ValueError("entry must carry a 3-vector 'translation'")
    if has_rot:
        rot = np.asarray(obj["rotation"], dtype=np.float64)
        if rot.size != 9:
            raise ValueError("'rotation' must hold 9 numbers, row-major")
        pose = CameraPose(rot.reshape(3, 3), np.asarray(translation, dtype=np.float64))
    else:
        euler = obj["euler"]
        if len(euler) != 3:
            raise ValueError("'euler' must be [yaw, pitch, roll] in degrees")
        pose = CameraPose.from_euler(*euler, translation=translation)
    prompt = obj.get("prompt")
    if prompt is not None and not isinstance(prompt, str):
        raise ValueError("'prompt' must be a string")
    overrides = obj.get("overrides")
    if overrides is not None:
        unknown = set(overrides) - OVERRIDE_KEYS
        if unknown:
            raise ValueError(f"unknown override keys: {sorted(unknown)}")
        overrides = {k: _parse_override(k, v) for k, v in overrides.items()}
    return TrajectoryEntry(pose=pose, prompt=prompt, overrides=overrides)


def _parse_override(key: str, value):
    if key == "t2":
        return int(value)
    if isinstance(value, str) and value.lower() in ("inf", "infinity"):
        return float("inf")
    return float(value)


def entry_to_dict(entry: TrajectoryEntry) -> dict:
    obj = {
        "rotation": [float(x) for x in entry.pose.rotation.ravel()],
        "translation": [float(x) for x in entry.pose.translation],
    }
    if entry.prompt is not None:
        obj["prompt"] = entry.prompt
    if entry.overrides:
        obj["overrides"] = {
            k: ("inf" if v == float("inf") else v) for k, v in entry.overrides.items()
        }
    return obj


def load_trajectory(path) -> list[TrajectoryEntry]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list) or not data:
        raise ValueError("trajectory file must hold a nonempty JSON list")
    return [entry_from_dict(obj) for obj in data]


def save_trajectory(path, entries) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([entry_to_dict(e) for e in entries], fh, indent=2)
        fh.write("\n")
