"""latentflight: perpetual flythrough synthesis by warping diffusion latents.

Instead of warping rendered pixels frame by frame, a partially inverted
diffusion latent is warped into the next camera view (low frequencies only,
the original high band is re-attached), re-noised, and denoised jointly
with the current view under cross-view attention injection and
feature-correspondence guidance.
"""

from ._kernels import KERNEL_BACKEND
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    DepthSource,
    WarpResult,
    downsample_depth,
    fill_holes,
    forward_warp,
    reproject,
    rescale_intrinsics,
    resample_warp,
    warp_with_result,
)
from .pipeline import Frame, PipelineConfig, SessionState, init_session, run_trajectory, step
from .scheduler import (
    NoiseSchedule,
    ScheduleKind,
    StepPlan,
    ddim_invert_step,
    ddim_step,
    ddpm_forward,
    guided_epsilon,
    make_schedule,
    make_step_plan,
)
from .spectral import SpectralSplit, merge_frequency, split_frequency, warp_latent_highpass

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND", "CameraIntrinsics", "CameraPose", "DepthMap", "DepthSource",
    "WarpResult", "downsample_depth", "fill_holes", "forward_warp", "reproject",
    "rescale_intrinsics", "resample_warp", "warp_with_result", "Frame", "PipelineConfig",
    "SessionState", "init_session", "run_trajectory", "step", "NoiseSchedule",
    "ScheduleKind", "StepPlan", "ddim_invert_step", "ddim_step", "ddpm_forward",
    "guided_epsilon", "make_schedule", "make_step_plan", "SpectralSplit",
    "merge_frequency", "split_frequency", "warp_latent_highpass", "__version__",
]
