"""Noise schedule, forward process and deterministic DDIM sampling.

The denoiser predicts the clean sequence (x0 parameterization). A DDIM
update therefore first recovers the implied noise direction from the
current state and the x0 prediction, then re-noises to the target step:

    eps_hat = (x_t - sqrt(ab_t) * x0_hat) / sqrt(1 - ab_t)
    x_prev  = sqrt(ab_prev) * x0_hat + sqrt(1 - ab_prev) * eps_hat

with ab_prev == 1 at the data endpoint (t_prev == -1), making the final
update return the x0 prediction itself.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import MotionSequence
from .errors import (
    ConfigError,
    DimensionError,
    InputError,
    NumericalError,
    ValidationError,
)

logger = logging.getLogger(__name__)

BETA_FLOOR = 1e-6
BETA_CEIL = 0.999
TERMINAL_ALPHA_BAR = 1e-3


@dataclass(frozen=True)
class NoiseSchedule:
    n_steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_min: float
    beta_max: float

    def sqrt_alpha_bar(self, t: int) -> float:
        return float(np.sqrt(self.alpha_bar[t]))

    def sqrt_one_minus_alpha_bar(self, t: int) -> float:
        return float(np.sqrt(1.0 - self.alpha_bar[t]))


def build_schedule(n_steps: int, beta_min: float, beta_max: float) -> NoiseSchedule:
    """Quadratic interpolation between sqrt noise rates, scaled by 1/T.

    beta_i = clamp(((1 - s_i) sqrt(beta_min) + s_i sqrt(beta_max))^2 / T)
    with s_i = i / (T - 1). The 1/T factor keeps the total amount of
    noise injected over the trajectory roughly constant as T changes.
    """
    if n_steps < 2:
        raise ConfigError(f"schedule needs at least 2 steps, got {n_steps}")
    if beta_min <= 0:
        raise ConfigError(f"beta_min must be positive, got {beta_min}")
    if beta_max < beta_min:
        raise ConfigError(f"beta_max ({beta_max}) must be >= beta_min ({beta_min})")
    s = np.arange(n_steps, dtype=np.float64) / (n_steps - 1)
    root = (1.0 - s) * np.sqrt(beta_min) + s * np.sqrt(beta_max)
    beta = np.clip(root * root / n_steps, BETA_FLOOR, BETA_CEIL)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if alpha_bar[-1] >= TERMINAL_ALPHA_BAR:
        logger.warning(
            "terminal alpha_bar %.3e >= %.0e; the forward process does not "
            "reach (near-)pure noise with n_steps=%d, beta=[%g, %g]",
            alpha_bar[-1],
            TERMINAL_ALPHA_BAR,
            n_steps,
            beta_min,
            beta_max,
        )
    return NoiseSchedule(
        n_steps=n_steps,
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        beta_min=float(beta_min),
        beta_max=float(beta_max),
    )


def _check_t(schedule: NoiseSchedule, t: int) -> int:
    t = int(t)
    if not 0 <= t < schedule.n_steps:
        raise InputError(f"timestep {t} outside [0, {schedule.n_steps - 1}]")
    return t


def forward_sample(
    x0: MotionSequence, t: int, noise: MotionSequence, schedule: NoiseSchedule
) -> MotionSequence:
    """Closed-form draw from q(x_t | x_0) given a standard normal draw."""
    t = _check_t(schedule, t)
    if x0.data.shape != noise.data.shape:
        raise DimensionError(
            f"noise shape {noise.data.shape} != data shape {x0.data.shape}"
        )
    ab = schedule.alpha_bar[t]
    out = np.sqrt(ab) * x0.data + np.sqrt(1.0 - ab) * noise.data
    return x0.with_data(out)


def ddim_step(
    x_t: MotionSequence,
    x0_hat: MotionSequence,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
) -> MotionSequence:
    """One deterministic DDIM update from step t to step t_prev.

    t_prev == -1 denotes the data endpoint (alpha_bar == 1 exactly).
    """
    t = _check_t(schedule, t)
    t_prev = int(t_prev)
    if t_prev != -1 and not 0 <= t_prev < t:
        raise InputError(f"t_prev must be -1 or in [0, {t - 1}], got {t_prev}")
    if x_t.data.shape != x0_hat.data.shape:
        raise DimensionError(
            f"prediction shape {x0_hat.data.shape} != state shape {x_t.data.shape}"
        )
    ab_t = schedule.alpha_bar[t]
    ab_prev = 1.0 if t_prev == -1 else schedule.alpha_bar[t_prev]
    denom = np.sqrt(1.0 - ab_t)
    eps_hat = (x_t.data - np.sqrt(ab_t) * x0_hat.data) / denom
    out = np.sqrt(ab_prev) * x0_hat.data + np.sqrt(1.0 - ab_prev) * eps_hat
    return x_t.with_data(out)


def sampling_timesteps(n_steps: int, steps: int) -> np.ndarray:
    """Descending, evenly spaced timestep ladder ending at step 0."""
    if not 1 <= steps <= n_steps:
        raise InputError(f"steps must be in [1, {n_steps}], got {steps}")
    ts = np.linspace(n_steps - 1, 0, steps).round().astype(np.int64)
    # Rounding can collide for steps close to n_steps; keep first of each.
    keep = np.concatenate(([True], np.diff(ts) != 0))
    return ts[keep]


def sample(
    denoiser: Callable,
    cond,
    n_frames: int,
    steps: int,
    seed: int,
    schedule: NoiseSchedule,
    frame_rate: float = 25.0,
    callback: Optional[Callable] = None,
) -> MotionSequence:
    """Deterministic DDIM sampling loop.

    ``denoiser(m_t, t, cond) -> prediction bundle`` must return an object
    whose ``m0_hat`` is the predicted clean MotionSequence. ``cond`` is a
    conditioning bundle; the audio term is added inside the denoiser
    callable, not here.
    """
    if n_frames < 1:
        raise InputError(f"n_frames must be >= 1, got {n_frames}")
    d = int(np.asarray(cond.keyframe).shape[1])
    audio = np.asarray(cond.audio)
    if audio.shape != (n_frames, d):
        raise DimensionError(
            f"conditioning audio shape {audio.shape} != ({n_frames}, {d})"
        )
    ladder = sampling_timesteps(schedule.n_steps, steps)
    rng = np.random.default_rng(seed)
    try:
        x = MotionSequence(rng.standard_normal((n_frames, d)), frame_rate)
        for i, t in enumerate(ladder):
            bundle = denoiser(x, int(t), cond)
            m0_hat = bundle.m0_hat
            if not isinstance(m0_hat, MotionSequence):
                m0_hat = MotionSequence(np.asarray(m0_hat), frame_rate)
            t_prev = int(ladder[i + 1]) if i + 1 < len(ladder) else -1
            x = ddim_step(x, m0_hat, int(t), t_prev, schedule)
            if callback is not None:
                callback(int(t), x)
    except ValidationError as exc:
        # MotionSequence construction rejects non-finite values, so a
        # diverging trajectory surfaces here.
        raise NumericalError(f"sampling diverged: {exc}") from None
    return x
