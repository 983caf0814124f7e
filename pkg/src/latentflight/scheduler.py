"""Noise schedule and sampling algebra.

The schedule table is indexed by absolute timestep t in [0, T] with
``alpha_bar[0] == 1``.  Sampling runs on a sparse, strictly increasing
timestep grid; all steps here are deterministic (eta = 0), which is what
makes inversion an exact algebraic inverse.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

BETA_START = 0.00085
BETA_END = 0.012


class ScheduleKind(enum.Enum):
    LINEAR = "linear"
    SCALED_LINEAR = "scaled_linear"


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative noise table for T training timesteps."""

    total_steps: int
    alpha_bar: np.ndarray
    kind: ScheduleKind

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.shape != (self.total_steps + 1,):
            raise ValueError(f"alpha_bar must have length T+1, got {ab.shape}")
        if ab[0] != 1.0:
            raise ValueError("alpha_bar[0] must be exactly 1")
        if np.any(np.diff(ab) >= 0) or np.any(ab <= 0) or np.any(ab > 1):
            raise ValueError("alpha_bar must be strictly decreasing within (0, 1]")
        object.__setattr__(self, "alpha_bar", ab)


@dataclass(frozen=True)
class StepPlan:
    """Sparse sampling grid with the warp and re-noise timesteps located on it."""

    ddim_timesteps: tuple[int, ...]
    t1_index: int
    t2_index: int

    def __post_init__(self):
        ts = tuple(int(t) for t in self.ddim_timesteps)
        if any(b <= a for a, b in zip(ts, ts[1:])) or ts[0] < 1:
            raise ValueError("ddim_timesteps must be strictly increasing and >= 1")
        if not (0 <= self.t1_index < self.t2_index < len(ts)):
            raise ValueError(f"need t1_index < t2_index within the grid, got {self.t1_index}, {self.t2_index}")
        object.__setattr__(self, "ddim_timesteps", ts)

    @property
    def t1(self) -> int:
        return self.ddim_timesteps[self.t1_index]

    @property
    def t2(self) -> int:
        return self.ddim_timesteps[self.t2_index]


def make_schedule(kind: ScheduleKind | str = ScheduleKind.SCALED_LINEAR, total_steps: int = 1000,
                  beta_start: float = BETA_START, beta_end: float = BETA_END) -> NoiseSchedule:
    """Build the cumulative-product table for a linear or scaled-linear beta ramp."""
    kind = ScheduleKind(kind)
    if total_steps < 2:
        raise ValueError(f"need at least 2 timesteps, got {total_steps}")
    if kind is ScheduleKind.LINEAR:
        betas = np.linspace(beta_start, beta_end, total_steps)
    else:
        betas = np.linspace(beta_start**0.5, beta_end**0.5, total_steps) ** 2
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(total_steps=total_steps, alpha_bar=alpha_bar, kind=kind)


def make_step_plan(schedule: NoiseSchedule, step_count: int = 50, t1: int = 21, t2: int = 441) -> StepPlan:
    """Uniform grid {1, 1+s, ...} with s = T // step_count; t1 and t2 must lie on it."""
    stride = schedule.total_steps // step_count
    grid = tuple(range(1, 1 + stride * step_count, stride))
    for name, t in (("t1", t1), ("t2", t2)):
        if t not in grid:
            raise ValueError(f"{name}={t} is not on the {step_count}-step grid (stride {stride})")
    return StepPlan(grid, grid.index(t1), grid.index(t2))


def _check_t(schedule: NoiseSchedule, t: int, name: str = "t"):
    if not (0 <= t <= schedule.total_steps):
        raise ValueError(f"{name}={t} outside [0, {schedule.total_steps}]")


def ddpm_forward(
    schedule: NoiseSchedule, x_from: np.ndarray, t_from: int, t_to: int, noise: np.ndarray
) -> np.ndarray:
    """Jump a latent to a noisier timestep via the marginal transition.

    ``sqrt(ab_to/ab_from) * x + sqrt(1 - ab_to/ab_from) * noise``; with
    t_from = 0 this is the standard closed-form noising of a clean latent.
    """
    _check_t(schedule, t_from, "t_from")
    _check_t(schedule, t_to, "t_to")
    if t_from >= t_to:
        raise ValueError(f"t_from={t_from} must be < t_to={t_to}")
    x_from = np.asarray(x_from, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x_from.shape != noise.shape:
        raise ValueError(f"noise shape {noise.shape} does not match latent {x_from.shape}")
    ratio = schedule.alpha_bar[t_to] / schedule.alpha_bar[t_from]
    return np.sqrt(ratio) * x_from + np.sqrt(1.0 - ratio) * noise


def ddim_step(
    schedule: NoiseSchedule, x_t: np.ndarray, eps_hat: np.ndarray, t: int, t_prev: int
) -> np.ndarray:
    """One deterministic denoising step from t down to t_prev."""
    _check_t(schedule, t)
    _check_t(schedule, t_prev, "t_prev")
    if t_prev >= t:
        raise ValueError(f"t_prev={t_prev} must be < t={t}")
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if x_t.shape != eps_hat.shape:
        raise ValueError(f"eps shape {eps_hat.shape} does not match latent {x_t.shape}")
    ab_t = schedule.alpha_bar[t]
    ab_p = schedule.alpha_bar[t_prev]
    x0 = (x_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    return np.sqrt(ab_p) * x0 + np.sqrt(1.0 - ab_p) * eps_hat


def ddim_invert_step(
    schedule: NoiseSchedule, x_t: np.ndarray, eps: np.ndarray, t: int, t_next: int
) -> np.ndarray:
    """Algebraic inverse of :func:`ddim_step` under the same noise prediction."""
    _check_t(schedule, t)
    _check_t(schedule, t_next, "t_next")
    if t_next <= t:
        raise ValueError(f"t_next={t_next} must be > t={t}")
    x_t = np.asarray(x_t, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x_t.shape != eps.shape:
        raise ValueError(f"eps shape {eps.shape} does not match latent {x_t.shape}")
    ab_t = schedule.alpha_bar[t]
    ab_n = schedule.alpha_bar[t_next]
    x0 = (x_t - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
    return np.sqrt(ab_n) * x0 + np.sqrt(1.0 - ab_n) * eps


def guided_epsilon(
    eps: np.ndarray, grad: np.ndarray, lam: float, alpha_bar_prev: float
) -> np.ndarray:
    """Steer a noise prediction against a loss gradient, scaled by sqrt(ab_prev)."""
    eps = np.asarray(eps, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if eps.shape != grad.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match eps {eps.shape}")
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    if lam == 0:
        return eps.copy()
    return eps - lam * np.sqrt(alpha_bar_prev) * grad
