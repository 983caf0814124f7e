"""Session orchestration: one flythrough step and trajectory playback.

A step runs, in order: encode the current frame, DDIM-invert it, warp the
low band of the inverted latent into the next view, jump the warped latent
to a noisier timestep, then denoise the current and next views in lockstep.
At each lockstep iteration the current view donates warped keys/values and
features; the next view receives them through attention injection and a
correspondence-gradient nudge on its noise prediction.  Steps are
transactional: a failure leaves the session untouched.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry, scheduler, spectral
from .attention import InjectionPlan, warp_kv
from .backends import BackendSuite, DenoiserRequest, TextEmbedding
from .errors import PipelineStageError, TrajectoryError
from .geometry import CameraIntrinsics, CameraPose, DepthMap, WarpResult
from .guidance import DenoiseContext, similarity_gradient
from .scheduler import NoiseSchedule, StepPlan
from .trajectory import TrajectoryEntry


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs of one flythrough session.

    ``t1`` is the timestep whose latent gets warped, ``t2`` the timestep the
    warped latent is re-noised to; both must sit on the sampling grid.
    ``sigma`` is the low-band radius of the frequency split (``inf`` warps
    everything) and ``guidance_lambda`` the correspondence-gradient weight.
    """

    total_steps: int = 1000
    t1: int = 21
    t2: int = 441
    sigma: float = 20.0
    guidance_lambda: float = 300.0
    ddim_step_count: int = 50
    guidance_scale: float = 7.5
    inversion_guidance_scale: float = 1.0
    feature_tap: str | None = None
    injection_sites: tuple[str, ...] | None = None  # None = all attention sites
    injection_floor: int = 0  # inject only at timesteps >= this (0 = every step)
    ddpm_forward: bool = True
    inversion_fixed_point_iters: int = 10
    inversion_fixed_point_tol: float = 1e-10
    seed: int = 0
    latent_shape: tuple[int, int, int] = (4, 64, 64)
    schedule_kind: str = "scaled_linear"
    fov_deg: float = 60.0

    def __post_init__(self):
        if not (0 < self.t1 < self.t2 < self.total_steps):
            raise ValueError(f"need 0 < t1 < t2 < T, got t1={self.t1}, t2={self.t2}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.guidance_lambda < 0:
            raise ValueError("lambda must be >= 0")
        object.__setattr__(self, "latent_shape", tuple(self.latent_shape))
        if self.injection_sites is not None:
            object.__setattr__(self, "injection_sites", tuple(sorted(self.injection_sites)))

    def make_schedule(self) -> NoiseSchedule:
        return scheduler.make_schedule(self.schedule_kind, self.total_steps)

    def make_plan(self, t2: int | None = None) -> StepPlan:
        return scheduler.make_step_plan(
            self.make_schedule(), self.ddim_step_count, self.t1, self.t2 if t2 is None else t2
        )


@dataclass(frozen=True)
class Frame:
    image: np.ndarray
    pose: CameraPose
    prompt: str
    timing: dict[str, float]
    hole_fraction: float


@dataclass(frozen=True)
class LogEntry:
    entry: TrajectoryEntry
    embedding: TextEmbedding
    hole_fraction: float
    timing: dict[str, float]


@dataclass
class SessionState:
    config: PipelineConfig
    backends: BackendSuite
    intrinsics: CameraIntrinsics
    current_image: np.ndarray
    current_depth: DepthMap
    prompt: str
    text_embedding: TextEmbedding
    frame_index: int = 0
    trajectory_log: list[LogEntry] = field(default_factory=list)
    schedule: NoiseSchedule = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.schedule is None:
            self.schedule = self.config.make_schedule()


def _stage(name: str, frame_index: int | None = None):
    """Wrap backend/stage failures with their stage name."""

    class _ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, PipelineStageError):
                raise PipelineStageError(name, str(exc), frame_index=frame_index) from exc
            return False

    return _ctx()


def _descending_pairs(plan: StepPlan, start_index: int):
    """(t, t_prev) pairs walking the grid down from start_index to timestep 0."""
    ts = plan.ddim_timesteps
    pairs = [(ts[i], ts[i - 1]) for i in range(start_index, 0, -1)]
    pairs.append((ts[0], 0))
    return pairs


def _ascending_pairs(plan: StepPlan, stop_index: int):
    """(t_lo, t_hi) pairs walking from timestep 0 up to grid index stop_index."""
    ts = plan.ddim_timesteps
    pairs = [(0, ts[0])]
    pairs.extend((ts[i - 1], ts[i]) for i in range(1, stop_index + 1))
    return pairs


def _denoise_sweep(session, x, plan, start_index, embedding, guidance_scale):
    """Plain DDIM sampling from grid index start_index down to a clean latent."""
    denoiser = session.backends.denoiser
    for t, t_prev in _descending_pairs(plan, start_index):
        eps = denoiser(DenoiserRequest(latent=x, timestep=t, text_embedding=embedding,
                                       guidance_scale=guidance_scale)).eps
        x = scheduler.ddim_step(session.schedule, x, eps, t, t_prev)
    return x


def _invert_sweep(session, x0, plan, stop_index, embedding):
    """DDIM inversion from a clean latent up to grid index stop_index.

    Each pair is solved by fixed-point iteration so the result is the exact
    preimage of the forward sampler (up to the configured tolerance), which
    keeps the reconstruction branch honest.
    """
    cfg = session.config
    denoiser = session.backends.denoiser
    x = x0
    for t_lo, t_hi in _ascending_pairs(plan, stop_index):
        def eps_at(latent):
            return denoiser(DenoiserRequest(
                latent=latent, timestep=t_hi, text_embedding=embedding,
                guidance_scale=cfg.inversion_guidance_scale)).eps

        x_hi = scheduler.ddim_invert_step(session.schedule, x, eps_at(x), t_lo, t_hi)
        for _ in range(cfg.inversion_fixed_point_iters):
            x_new = scheduler.ddim_invert_step(session.schedule, x, eps_at(x_hi), t_lo, t_hi)
            done = np.max(np.abs(x_new - x_hi)) < cfg.inversion_fixed_point_tol
            x_hi = x_new
            if done:
                break
        x = x_hi
    return x


def init_session(
    prompt_or_image, config: PipelineConfig, backends: BackendSuite
) -> SessionState:
    """Start a session from a text prompt or an existing (H, W, 3) image."""
    if isinstance(prompt_or_image, str):
        prompt = prompt_or_image
        image = None
    else:
        prompt = ""
        image = np.asarray(prompt_or_image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"expected an (H, W, 3) image, got {image.shape}")
        if image.min() < 0 or image.max() > 1:
            raise ValueError("image values must lie in [0, 1]")

    with _stage("text_encode"):
        embedding = backends.text_encoder(prompt)

    plan = config.make_plan()
    schedule = config.make_schedule()
    session = SessionState(
        config=config,
        backends=backends,
        intrinsics=None,  # type: ignore[arg-type]  # set below once the size is known
        current_image=None,  # type: ignore[arg-type]
        current_depth=None,  # type: ignore[arg-type]
        prompt=prompt,
        text_embedding=embedding,
        schedule=schedule,
    )

    if image is None:
        with _stage("generate"):
            rng = np.random.default_rng([config.seed, 1])
            x = rng.standard_normal(config.latent_shape)
            top = len(plan.ddim_timesteps) - 1
            x0 = _denoise_sweep(session, x, plan, top, embedding, config.guidance_scale)
            image = backends.autoencoder.decode(x0)

    with _stage("depth"):
        depth = backends.depth_estimator(image)
    if depth.shape != image.shape[:2]:
        raise PipelineStageError("depth", f"depth {depth.shape} does not match image "
                                          f"{image.shape[:2]}")

    h, w = image.shape[:2]
    session.intrinsics = CameraIntrinsics.from_fov(w, h, config.fov_deg)
    session.current_image = image
    session.current_depth = depth
    return session


def _effective_config(config: PipelineConfig, overrides: dict | None) -> PipelineConfig:
    if not overrides:
        return config
    mapped = {}
    for key, value in overrides.items():
        mapped[{"lambda": "guidance_lambda"}.get(key, key)] = value
    allowed = {"sigma", "guidance_lambda", "t2"}
    unknown = set(mapped) - allowed
    if unknown:
        raise ValueError(f"unsupported step overrides: {sorted(unknown)}")
    return replace(config, **mapped)


def step(
    session: SessionState,
    pose: CameraPose,
    new_prompt: str | None = None,
    overrides: dict | None = None,
) -> Frame:
    """Advance the flythrough one camera move; returns the new frame."""
    cfg = _effective_config(session.config, overrides)
    plan = cfg.make_plan()
    backends = session.backends
    frame_index = session.frame_index
    timing: dict[str, float] = {}
    tic = time.perf_counter

    if new_prompt is not None:
        with _stage("text_encode", frame_index):
            embedding = backends.text_encoder(new_prompt)
        prompt = new_prompt
    else:
        embedding, prompt = session.text_embedding, session.prompt

    t0 = tic()
    with _stage("encode", frame_index):
        z0 = backends.autoencoder.encode(session.current_image)
    timing["encode"] = tic() - t0

    c, lh, lw = z0.shape

    t0 = tic()
    with _stage("invert", frame_index):
        x_t1 = _invert_sweep(session, z0, plan, plan.t1_index, session.text_embedding)
        if cfg.ddpm_forward:
            x_cur = _invert_sweep_from(session, x_t1, plan, plan.t1_index, plan.t2_index,
                                       session.text_embedding)
        else:
            x_cur = x_t1
    timing["invert"] = tic() - t0

    t0 = tic()
    with _stage("warp", frame_index):
        k_lat = geometry.rescale_intrinsics(session.intrinsics, lw, lh)
        depth_lat = geometry.downsample_depth(session.current_depth, lh, lw)
        x_warped, warp = spectral.warp_latent_highpass(x_t1, depth_lat, k_lat, pose, cfg.sigma)
    timing["warp"] = tic() - t0

    t0 = tic()
    with _stage("ddpm_forward", frame_index):
        if cfg.ddpm_forward:
            noise = np.random.default_rng([cfg.seed, 2, frame_index]).standard_normal(z0.shape)
            x_next = scheduler.ddpm_forward(session.schedule, x_warped, cfg.t1, cfg.t2, noise)
            start_index = plan.t2_index
        else:
            x_next = x_warped
            start_index = plan.t1_index
    timing["ddpm_forward"] = tic() - t0

    t0 = tic()
    with _stage("denoise", frame_index):
        x_next = _lockstep_denoise(session, cfg, plan, x_cur, x_next, warp,
                                   embedding, start_index)
    timing["denoise"] = tic() - t0

    t0 = tic()
    with _stage("decode", frame_index):
        image = np.clip(backends.autoencoder.decode(x_next), 0.0, 1.0)
    timing["decode"] = tic() - t0

    t0 = tic()
    with _stage("depth", frame_index):
        depth = backends.depth_estimator(image)
    timing["depth"] = tic() - t0

    frame = Frame(image=image, pose=pose, prompt=prompt, timing=timing,
                  hole_fraction=warp.hole_fraction)

    # Commit: all stages succeeded, mutate the session only now.
    session.current_image = image
    session.current_depth = depth
    session.prompt = prompt
    session.text_embedding = embedding
    session.frame_index += 1
    session.trajectory_log.append(LogEntry(
        entry=TrajectoryEntry(pose=pose, prompt=new_prompt, overrides=overrides or None),
        embedding=embedding,
        hole_fraction=warp.hole_fraction,
        timing=timing,
    ))
    return frame


def _invert_sweep_from(session, x, plan, from_index, stop_index, embedding):
    """Continue an inversion from one grid index up to another."""
    cfg = session.config
    denoiser = session.backends.denoiser
    ts = plan.ddim_timesteps
    for i in range(from_index + 1, stop_index + 1):
        t_lo, t_hi = ts[i - 1], ts[i]

        def eps_at(latent):
            return denoiser(DenoiserRequest(
                latent=latent, timestep=t_hi, text_embedding=embedding,
                guidance_scale=cfg.inversion_guidance_scale)).eps

        x_hi = scheduler.ddim_invert_step(session.schedule, x, eps_at(x), t_lo, t_hi)
        for _ in range(cfg.inversion_fixed_point_iters):
            x_new = scheduler.ddim_invert_step(session.schedule, x, eps_at(x_hi), t_lo, t_hi)
            done = np.max(np.abs(x_new - x_hi)) < cfg.inversion_fixed_point_tol
            x_hi = x_new
            if done:
                break
        x = x_hi
    return x


def _injection_site_ids(session, cfg) -> tuple[str, ...]:
    available = session.backends.denoiser.taps.attention_ids()
    if cfg.injection_sites is None:
        return available
    unknown = set(cfg.injection_sites) - set(available)
    if unknown:
        raise ValueError(f"injection sites not published by the denoiser: {sorted(unknown)}")
    return cfg.injection_sites


def _feature_tap(session, cfg) -> str | None:
    if cfg.guidance_lambda == 0:
        return None
    if cfg.feature_tap is not None:
        session.backends.denoiser.taps.require(cfg.feature_tap)
        return cfg.feature_tap
    sites = session.backends.denoiser.taps.feature_sites
    if not sites:
        raise ValueError("guidance requested but the denoiser publishes no feature taps")
    return sites[0].site_id


def _lockstep_denoise(session, cfg, plan, x_cur, x_next, warp: WarpResult,
                      embedding, start_index):
    """Denoise both branches together, injecting warped K/V and guiding eps."""
    denoiser = session.backends.denoiser
    sites = _injection_site_ids(session, cfg)
    tap = _feature_tap(session, cfg)
    capture = frozenset(sites) | (frozenset({tap}) if tap else frozenset())

    for t, t_prev in _descending_pairs(plan, start_index):
        cur_resp = denoiser(DenoiserRequest(
            latent=x_cur, timestep=t, text_embedding=session.text_embedding,
            capture=capture, guidance_scale=cfg.inversion_guidance_scale))

        active_sites = sites if t >= cfg.injection_floor else ()
        plan_entries = {sid: warp_kv(cur_resp.captured_kv[sid], warp)
                        for sid in active_sites}
        injection = InjectionPlan(plan_entries) if plan_entries else None

        next_resp = denoiser(DenoiserRequest(
            latent=x_next, timestep=t, text_embedding=embedding,
            injection=injection, guidance_scale=cfg.guidance_scale))
        eps_hat = next_resp.eps

        if tap is not None:
            f_cur = cur_resp.captured_features[tap]
            f_cur_warped = geometry.warp_with_result(f_cur, warp)
            tap_warp = geometry.resample_warp(warp, *f_cur.shape[1:])
            if not tap_warp.hole_mask.all():  # no correspondences exist otherwise
                context = DenoiseContext(text_embedding=embedding,
                                         guidance_scale=cfg.guidance_scale,
                                         injection=injection, feature_tap=tap)
                grad = similarity_gradient(denoiser, x_next, t, context,
                                           f_cur_warped, ~tap_warp.hole_mask)
                eps_hat = scheduler.guided_epsilon(
                    eps_hat, grad, cfg.guidance_lambda, session.schedule.alpha_bar[t_prev])

        x_cur = scheduler.ddim_step(session.schedule, x_cur, cur_resp.eps, t, t_prev)
        x_next = scheduler.ddim_step(session.schedule, x_next, eps_hat, t, t_prev)
    return x_next


def run_trajectory(session: SessionState, entries) -> list[Frame]:
    """Run a sequence of camera moves; on failure, partial frames ride the error."""
    entries = list(entries)
    if not entries:
        raise ValueError("trajectory must contain at least one entry")
    frames: list[Frame] = []
    for entry in entries:
        if isinstance(entry, CameraPose):
            entry = TrajectoryEntry(pose=entry)
        try:
            frames.append(step(session, entry.pose, entry.prompt, entry.overrides))
        except Exception as exc:
            raise TrajectoryError(session.frame_index, exc, frames) from exc
    return frames
