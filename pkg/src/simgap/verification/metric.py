"""Crash / path-progress safety metric."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .scenarios import Scenario, shortest_path


@dataclass(frozen=True)
class SafetyConfig:
    inflation: float = 0.05  # m, static obstacle cells (and walls) grown by this margin
    collision_radius: float = 0.15  # m, agent-to-moving-obstacle crash distance
    capture_fraction: float = 0.25  # path cell counts as passed within this fraction of a cell
    walls_crash: bool = True

    def __post_init__(self) -> None:
        if self.inflation < 0 or self.collision_radius < 0:
            raise ValueError("inflation and collision_radius must be nonnegative")
        if not 0 < self.capture_fraction < 0.5:
            raise ValueError("capture_fraction must lie in (0, 0.5)")


@dataclass(frozen=True)
class SafetyValue:
    value: float
    crashed: bool
    reached_goal: bool
    steps_used: int

    def __post_init__(self) -> None:
        if self.crashed and self.value != -1.0:
            raise ValueError("a crashed trajectory must score -1")
        if not self.crashed and self.value < 0:
            raise ValueError("a safe trajectory must score >= 0")

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "crashed": self.crashed,
            "reached_goal": self.reached_goal,
            "steps_used": self.steps_used,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SafetyValue":
        return cls(float(d["value"]), bool(d["crashed"]), bool(d["reached_goal"]), int(d["steps_used"]))


_DR = np.array([-1, -1, -1, 0, 0, 0, 1, 1, 1])
_DC = np.array([-1, 0, 1, -1, 0, 1, -1, 0, 1])


def padded_occupancy(occ: np.ndarray) -> np.ndarray:
    """(B, R, C) occupancy framed by a ring of free cells, for 3x3 neighbourhood lookups."""
    return np.pad(occ, ((0, 0), (1, 1), (1, 1)), constant_values=False)


def neighbourhood_gaps(x, y, occ_pad, origin, cell):
    """Axis gaps from points (B,) to the 3x3 cells around each, and their occupancy.

    Returns ``(gx, gy, occ)`` of shape (B, 9); ``gx, gy`` are the
    per-axis distances to each cell's box (zero inside).
    """
    rows = occ_pad.shape[1] - 2
    cols = occ_pad.shape[2] - 2
    c = np.floor((x - origin[0]) / cell).astype(int)
    r = np.floor((y - origin[1]) / cell).astype(int)
    rr = r[:, None] + _DR
    cc = c[:, None] + _DC
    ok = (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols)
    b = np.arange(len(x))[:, None]
    occ = occ_pad[b, np.clip(rr, -1, rows) + 1, np.clip(cc, -1, cols) + 1] & ok
    cx = origin[0] + (cc + 0.5) * cell
    cy = origin[1] + (rr + 0.5) * cell
    gx = np.maximum(0.0, np.abs(x[:, None] - cx) - 0.5 * cell)
    gy = np.maximum(0.0, np.abs(y[:, None] - cy) - 0.5 * cell)
    return gx, gy, occ


def static_crash(x: float, y: float, scenario: Scenario, cfg: SafetyConfig) -> bool:
    """Is the point within ``inflation`` of an obstacle cell, or of a wall?"""
    x0, y0 = scenario.origin
    cs = scenario.cell_size
    infl = cfg.inflation
    x1 = x0 + scenario.cols * cs
    y1 = y0 + scenario.rows * cs
    if cfg.walls_crash and (x - x0 < infl or x1 - x < infl or y - y0 < infl or y1 - y < infl):
        return True
    if cfg.walls_crash and not (x0 <= x <= x1 and y0 <= y <= y1):
        return True
    c = math.floor((x - x0) / cs)
    r = math.floor((y - y0) / cs)
    for rr in (r - 1, r, r + 1):
        for cc in (c - 1, c, c + 1):
            if (rr, cc) not in scenario.static_obstacles:
                continue
            cx = x0 + (cc + 0.5) * cs
            cy = y0 + (rr + 0.5) * cs
            gx = max(0.0, abs(x - cx) - 0.5 * cs)
            gy = max(0.0, abs(y - cy) - 0.5 * cs)
            if gx * gx + gy * gy <= infl * infl:
                return True
    return False


def safety_metric(
    states: np.ndarray,
    scenario: Scenario,
    obstacle_trace: Optional[np.ndarray] = None,
    cfg: SafetyConfig = SafetyConfig(),
    stop_at_goal: bool = False,
) -> SafetyValue:
    """Score a trajectory: -1 on any crash, otherwise the path progress in metres.

    ``states`` is (J + 1, >= 2) planar poses; ``obstacle_trace`` is
    (J + 1, M, 2) moving-obstacle positions aligned with the states.
    Progress is the index of the last shortest-path cell captured, in
    order, times the cell size.
    """
    states = np.asarray(states, dtype=float)
    n = states.shape[0]
    if n < 1:
        raise ValueError("empty trajectory")
    m = len(scenario.moving_obstacles)
    if obstacle_trace is None:
        if m:
            raise ValueError(f"scenario has {m} moving obstacles but no obstacle trace was given")
        obstacle_trace = np.zeros((n, 0, 2))
    obstacle_trace = np.asarray(obstacle_trace, dtype=float)
    if obstacle_trace.shape[:2] != (n, m):
        raise ValueError(
            f"obstacle trace shape {obstacle_trace.shape} does not match {n} states and {m} obstacles"
        )
    if scenario.cell_of(states[0, 0], states[0, 1]) != scenario.start_cell:
        raise ValueError("trajectory does not start in the scenario's start cell")

    centers = [scenario.cell_center(c) for c in shortest_path(scenario)]
    last = len(centers) - 1
    capture2 = (cfg.capture_fraction * scenario.cell_size) ** 2
    hit2 = cfg.collision_radius**2
    progress = 0
    for j in range(n):
        x, y = float(states[j, 0]), float(states[j, 1])
        if static_crash(x, y, scenario, cfg):
            return SafetyValue(-1.0, True, False, j)
        for ox, oy in obstacle_trace[j]:
            if (x - ox) * (x - ox) + (y - oy) * (y - oy) <= hit2:
                return SafetyValue(-1.0, True, False, j)
        if progress < last:
            cx, cy = centers[progress + 1]
            if (x - cx) * (x - cx) + (y - cy) * (y - cy) <= capture2:
                progress += 1
        if stop_at_goal and progress == last:
            return SafetyValue(progress * scenario.cell_size, False, True, j)
    return SafetyValue(progress * scenario.cell_size, False, progress == last, n - 1)
