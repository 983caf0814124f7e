"""HTTP session service for scripts and the steering UI.

One step may be in flight per session; a second concurrent step gets 409 so
interactive clients see explicit backpressure instead of a queue.  Mock
backends are built per session; pretrained backends are shared and their
denoiser calls serialized process-wide.
"""

from __future__ import annotations

import os
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware

from . import pipeline
from .backends import BackendSuite, mock_suite
from .errors import ConfigurationError, PipelineStageError
from .records import SessionRecord, base64_to_image, config_from_dict, config_to_dict, image_to_base64
from .trajectory import entry_from_dict

ADAPTER_CONFIG_ENV = "LATENTFLIGHT_ADAPTER_CONFIG"

_pretrained_lock = threading.Lock()
_pretrained_suite: BackendSuite | None = None


class _SerializedDenoiser:
    """Funnels all sessions' calls to one shared denoiser through a lock."""

    def __init__(self, inner, lock: threading.Lock):
        self._inner = inner
        self._lock = lock
        self.taps = inner.taps
        self.gradient_mode = inner.gradient_mode

    def __call__(self, request):
        with self._lock:
            return self._inner(request)

    def tap_vjp(self, request, tap_id, cotangent):
        with self._lock:
            return self._inner.tap_vjp(request, tap_id, cotangent)


def default_backend_factory(backend: str, config: pipeline.PipelineConfig) -> BackendSuite:
    if backend == "mock":
        return mock_suite(seed=config.seed)
    if backend == "mock_attention":
        return mock_suite(seed=config.seed, denoiser="tiny_attention")
    if backend == "pretrained":
        global _pretrained_suite
        with _pretrained_lock:
            if _pretrained_suite is None:
                from .backends.pretrained import adapter_config_from_env, pretrained_adapters

                suite = pretrained_adapters(
                    adapter_config_from_env(os.environ.get(ADAPTER_CONFIG_ENV)))
                suite.denoiser = _SerializedDenoiser(suite.denoiser, threading.Lock())
                _pretrained_suite = suite
        return _pretrained_suite
    raise ConfigurationError(f"unknown backend {backend!r}")


@dataclass
class _LiveSession:
    session: pipeline.SessionState
    record: SessionRecord
    lock: threading.Lock
    backend: str


def create_app(store_dir: str | Path | None = None, backend_factory=None) -> FastAPI:
    store_root = Path(store_dir) if store_dir else Path("latentflight-sessions")
    factory = backend_factory or default_backend_factory
    sessions: dict[str, _LiveSession] = {}
    registry_lock = threading.Lock()

    app = FastAPI(title="latentflight", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def _get(sid: str) -> _LiveSession:
        live = sessions.get(sid)
        if live is None:
            raise HTTPException(status_code=404, detail=f"unknown session {sid}")
        return live

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/sessions")
    def create_session(body: dict):
        prompt = body.get("prompt")
        image_b64 = body.get("image")
        if (prompt is None) == (image_b64 is None):
            raise HTTPException(status_code=400,
                                detail="provide exactly one of 'prompt' or 'image'")
        backend = body.get("backend", "mock")
        try:
            config = config_from_dict(body.get("config") or {})
        except (ValueError, TypeError) as exc:
            raise HTTPException(status_code=400, detail=f"bad config: {exc}") from exc
        try:
            suite = factory(backend, config)
        except ConfigurationError as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc

        if image_b64 is not None:
            try:
                source_input = base64_to_image(image_b64)
            except Exception as exc:  # noqa: BLE001
                raise HTTPException(status_code=400, detail=f"bad image: {exc}") from exc
            source = {"type": "image"}
        else:
            source_input = prompt
            source = {"type": "prompt", "prompt": prompt}

        sid = uuid.uuid4().hex
        try:
            session = pipeline.init_session(source_input, config, suite)
        except PipelineStageError as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc
        record = SessionRecord.create(store_root / sid, config, source, backend)
        record.write_frame(0, session.current_image)
        with registry_lock:
            sessions[sid] = _LiveSession(session, record, threading.Lock(), backend)
        return {
            "session_id": sid,
            "frame_index": 0,
            "image": image_to_base64(session.current_image),
        }

    @app.post("/sessions/{sid}/step")
    def step_session(sid: str, body: dict):
        live = _get(sid)
        pose_obj = body.get("pose")
        if pose_obj is None:
            raise HTTPException(status_code=400, detail="missing 'pose'")
        entry_obj = dict(pose_obj)
        if "prompt" in body and body["prompt"] is not None:
            entry_obj["prompt"] = body["prompt"]
        if "overrides" in body and body["overrides"] is not None:
            entry_obj["overrides"] = body["overrides"]
        try:
            entry = entry_from_dict(entry_obj)
        except (ValueError, TypeError) as exc:
            raise HTTPException(status_code=400, detail=f"malformed pose: {exc}") from exc

        if not live.lock.acquire(blocking=False):
            raise HTTPException(status_code=409, detail="a step is already in flight")
        try:
            frame = pipeline.step(live.session, entry.pose, entry.prompt, entry.overrides)
            index = live.session.frame_index
            live.record.write_frame(index, frame.image)
            live.record.append_log(entry, info={
                "hole_fraction": frame.hole_fraction,
                "timing": {k: round(v, 6) for k, v in frame.timing.items()},
            })
        except HTTPException:
            raise
        except PipelineStageError as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        finally:
            live.lock.release()
        return {
            "frame_index": index,
            "image": image_to_base64(frame.image),
            "hole_fraction": frame.hole_fraction,
            "timing": frame.timing,
        }

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        live = _get(sid)
        return {
            "session_id": sid,
            "frame_count": live.session.frame_index + 1,
            "backend": live.backend,
            "config": config_to_dict(live.session.config),
            "log": live.record.load_log(),
        }

    @app.get("/sessions/{sid}/frames/{index}")
    def get_frame(sid: str, index: int):
        live = _get(sid)
        if not (0 <= index <= live.session.frame_index):
            raise HTTPException(status_code=404, detail=f"frame {index} not recorded")
        return Response(content=live.record.frame_path(index).read_bytes(),
                        media_type="image/png")

    @app.delete("/sessions/{sid}")
    def delete_session(sid: str):
        with registry_lock:
            live = sessions.pop(sid, None)
        if live is None:
            raise HTTPException(status_code=404, detail=f"unknown session {sid}")
        return {"deleted": sid}

    return app


def serve(host: str = "127.0.0.1", port: int = 8000, store_dir=None, backend_factory=None):
    import uvicorn

    uvicorn.run(create_app(store_dir, backend_factory), host=host, port=port, log_level="warning")
