"""Noise schedules and the closed-form forward (noising) process."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, ContractError, DimensionError

LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 0.02
COSINE_OFFSET = 0.008
MAX_BETA = 0.999


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step betas and the cumulative signal retention ``alpha_bars``.

    Arrays are indexed from step 1, i.e. ``betas[0]`` is beta_1.
    ``signal_scale`` is the magnitude of the clean target signal.
    """

    kind: str
    steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    signal_scale: float = 1.0

    def alpha_bar(self, k):
        """alpha_bar at step ``k`` (scalar or integer array), with alpha_bar(0) = 1."""
        table = np.concatenate([[1.0], self.alpha_bars])
        return table[k]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "steps": self.steps, "signal_scale": self.signal_scale}


def _cosine_f(k, K: int, s: float = COSINE_OFFSET):
    return np.cos(((np.asarray(k, dtype=np.float64) / K) + s) / (1.0 + s) * math.pi / 2.0) ** 2


def make_schedule(kind: str = "cosine", steps: int = 50, signal_scale: float = 1.0) -> NoiseSchedule:
    if steps < 1:
        raise ConfigError(f"schedule needs at least one step, got {steps}")
    if not signal_scale > 0:
        raise ConfigError(f"signal_scale must be positive, got {signal_scale}")
    if kind == "linear":
        betas = np.linspace(LINEAR_BETA_START, LINEAR_BETA_END, steps)
    elif kind == "cosine":
        f = _cosine_f(np.arange(steps + 1), steps)
        abar = f / f[0]
        betas = np.minimum(1.0 - abar[1:] / abar[:-1], MAX_BETA)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    alphas = 1.0 - betas
    return NoiseSchedule(kind, int(steps), betas, alphas, np.cumprod(alphas), float(signal_scale))


def forward_diffuse(sched: NoiseSchedule, x0: np.ndarray, k, noise: np.ndarray) -> np.ndarray:
    """Sample x_k from x_0 in one shot.

    ``k`` may be an int or an integer array with one entry per leading row
    of ``x0`` (used for per-query steps during training).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x0.shape:
        raise DimensionError(f"noise shape {noise.shape} != x0 shape {x0.shape}")
    k = np.asarray(k)
    if np.any(k < 1) or np.any(k > sched.steps):
        raise ContractError(f"step must lie in [1, {sched.steps}]")
    abar = sched.alpha_bar(k)
    if abar.ndim:
        abar = abar.reshape(abar.shape + (1,) * (x0.ndim - abar.ndim))
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise


def ddim_subsequence(steps: int, eval_steps: int) -> list[int]:
    """Evenly spaced, strictly decreasing timesteps from ``steps`` down to 1."""
    if eval_steps < 1:
        raise ConfigError(f"eval_steps must be at least 1, got {eval_steps}")
    if eval_steps > steps:
        raise ConfigError(f"eval_steps={eval_steps} exceeds the {steps} trained diffusion steps")
    if eval_steps == 1:
        return [steps]
    grid = np.linspace(steps, 1, eval_steps)
    return [int(v) for v in np.floor(grid + 0.5)]
