"""Uncontrolled moving obstacles: constant-speed unicycle random walkers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class ObstacleConfig:
    speed: float = 0.1  # m/s
    heading_noise: float = 0.3  # rad, half-width of the per-step heading increment

    def __post_init__(self) -> None:
        if self.speed < 0 or self.heading_noise < 0:
            raise ValueError("obstacle parameters must be nonnegative")


def _reflect(v: float, lo: float, hi: float) -> Tuple[float, bool]:
    if v < lo:
        return 2.0 * lo - v, True
    if v > hi:
        return 2.0 * hi - v, True
    return v, False


def moving_obstacle_step(
    pose: Tuple[float, float, float],
    dt: float,
    bounds: Tuple[float, float, float, float],
    config: ObstacleConfig = ObstacleConfig(),
    rng: Optional[np.random.Generator] = None,
    increment: Optional[float] = None,
) -> Tuple[float, float, float]:
    """One step of the walker: perturb heading, move, reflect off the walls.

    The heading increment is either given or drawn uniformly from
    [-heading_noise, heading_noise].
    """
    x, y, h = pose
    if increment is None:
        increment = rng.uniform(-config.heading_noise, config.heading_noise) if rng is not None else 0.0
    h = h + increment
    step = config.speed * dt
    x = x + step * math.cos(h)
    y = y + step * math.sin(h)
    x, hit_x = _reflect(x, bounds[0], bounds[1])
    if hit_x:
        h = math.pi - h
    y, hit_y = _reflect(y, bounds[2], bounds[3])
    if hit_y:
        h = -h
    return x, y, math.fmod(h, 2.0 * math.pi)


def step_obstacles(
    xy: np.ndarray,
    heading: np.ndarray,
    increments: np.ndarray,
    dt: float,
    bounds: Tuple[float, float, float, float],
    config: ObstacleConfig,
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`moving_obstacle_step` over arrays of walkers.

    ``xy`` has shape (..., 2), ``heading`` and ``increments`` shape (...).
    """
    h = heading + increments
    step = config.speed * dt
    x = xy[..., 0] + step * np.cos(h)
    y = xy[..., 1] + step * np.sin(h)
    lo_x = x < bounds[0]
    hi_x = x > bounds[1]
    x = np.where(lo_x, 2.0 * bounds[0] - x, np.where(hi_x, 2.0 * bounds[1] - x, x))
    h = np.where(lo_x | hi_x, np.pi - h, h)
    lo_y = y < bounds[2]
    hi_y = y > bounds[3]
    y = np.where(lo_y, 2.0 * bounds[2] - y, np.where(hi_y, 2.0 * bounds[3] - y, y))
    h = np.where(lo_y | hi_y, -h, h)
    return np.stack([x, y], axis=-1), np.fmod(h, 2.0 * np.pi)
