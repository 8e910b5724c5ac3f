"""Two-level navigation controller with a stop-style safety layer.

Upper level: waypoints are the cell centres of the shortest grid path; the
active waypoint advances once the agent is inside the capture radius.
Lower level: the range-bearing tracker used for waypoint sampling,
saturated to the input box, with the range taken as the path length still
to go so the agent only slows on the final approach.  Safety layer: translation along the current
direction of motion is cancelled when a static obstacle cell (or the wall)
is within the probe length, or a moving obstacle sits inside the stop
radius within the forward cone.  Rotation is never blocked.

The law is written over batches of agents so thousands of verification
rollouts can advance in lockstep; a batch of one serves closed-loop
deployment.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..dynamics import ModelInput, ModelState, PlatformProfile
from .metric import neighbourhood_gaps, padded_occupancy
from .scenarios import Scenario, shortest_path

KINDS = ("navigate", "zero", "straight")


@dataclass(frozen=True)
class ControllerConfig:
    kind: str = "navigate"
    k_rho: float = 0.8
    k_alpha: float = 1.5
    capture_fraction: float = 0.25  # capture radius as a fraction of the cell size
    goal_fraction: float = 0.1  # stop radius at the final waypoint, fraction of a cell
    static_probe_fraction: float = 0.4  # probe length ahead, fraction of a cell
    clearance_fraction: float = 0.175  # keep this far from obstacle cells and walls, fraction of a cell
    moving_stop_radius: float = 0.4  # m
    stop_cone: float = 1.3  # rad, half-angle of the forward cone for moving obstacles
    align_threshold: float = 0.4  # rad, turn in place while the heading error exceeds this
    evade_radius: float = 0.35  # m, back away from a moving obstacle this close (0 disables)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"controller kind must be one of {KINDS}, got {self.kind!r}")
        if self.k_rho <= 0 or self.k_alpha <= 0:
            raise ValueError("tracker gains must be positive")
        if not 0 < self.capture_fraction < 0.5:
            raise ValueError("capture_fraction must lie in (0, 0.5)")
        if not 0 < self.goal_fraction <= self.capture_fraction:
            raise ValueError("goal_fraction must lie in (0, capture_fraction]")
        if min(self.static_probe_fraction, self.clearance_fraction, self.moving_stop_radius) < 0:
            raise ValueError("safety radii must be nonnegative")
        if not 0 <= self.stop_cone <= math.pi:
            raise ValueError("stop_cone must lie in [0, pi]")
        if not 0 < self.align_threshold <= 0.5 * math.pi:
            raise ValueError("align_threshold must lie in (0, pi/2]")
        if self.evade_radius < 0:
            raise ValueError("evade_radius must be nonnegative")

    @property
    def controller_id(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return f"{self.kind}-{hashlib.sha256(blob).hexdigest()[:10]}"


_ESCAPE_FAN = tuple(s * k * 0.25 * math.pi for k in range(4) for s in ((1,) if k == 0 else (1, -1)))


_UNREACHED = np.iinfo(np.int64).max
_NEIGHBOURS = ((-1, 0), (0, -1), (0, 1), (1, 0))


def _bfs_field(occ: np.ndarray, source: Tuple[int, int]) -> np.ndarray:
    """4-connected step counts to ``source`` over free cells."""
    rows, cols = occ.shape
    dist = np.full((rows, cols), _UNREACHED, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        r, c = queue.popleft()
        for dr, dc in _NEIGHBOURS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < rows and 0 <= cc < cols and not occ[rr, cc] and dist[rr, cc] == _UNREACHED:
                dist[rr, cc] = dist[r, c] + 1
                queue.append((rr, cc))
    return dist


def _wrap(a: np.ndarray) -> np.ndarray:
    return np.mod(a + np.pi, 2.0 * np.pi) - np.pi


class NavigationBatch:
    """Controller memory and law for a batch of scenarios on a common grid."""

    def __init__(
        self,
        scenarios: Sequence[Scenario],
        profile: PlatformProfile,
        config: ControllerConfig,
        walls_block: bool = True,
    ) -> None:
        if not scenarios:
            raise ValueError("empty scenario batch")
        first = scenarios[0]
        for sc in scenarios[1:]:
            if not sc.same_grid(first):
                raise ValueError("all scenarios in a batch must share one grid")
        self.profile = profile
        self.config = config
        self.walls_block = walls_block
        self.rows, self.cols = first.rows, first.cols
        self.cell = first.cell_size
        self.origin = np.asarray(first.origin, dtype=float)
        self.size = len(scenarios)

        self.cell_paths: List[List[Tuple[int, int]]] = [shortest_path(sc) for sc in scenarios]
        lmax = max(len(p) for p in self.cell_paths)
        centers = np.empty((self.size, lmax, 2))
        for b, (sc, path) in enumerate(zip(scenarios, self.cell_paths)):
            pts = [sc.cell_center(c) for c in path]
            pts += [pts[-1]] * (lmax - len(pts))
            centers[b] = pts
        self.centers = centers
        cells = np.empty((self.size, lmax, 2), dtype=int)
        for b, path in enumerate(self.cell_paths):
            cells[b] = path + [path[-1]] * (lmax - len(path))
        self.path_cells = cells
        self.path_len = np.array([len(p) for p in self.cell_paths])
        # path length still to go beyond waypoint k, so speed only tapers on the final approach
        self.beyond = np.maximum(self.path_len[:, None] - 1 - np.arange(lmax)[None, :], 0) * self.cell
        self._fields = {}
        self.occ = np.stack([sc.occupancy() for sc in scenarios])
        self.occ_pad = padded_occupancy(self.occ)
        self.rows_idx = np.arange(self.size)
        self.capture = config.capture_fraction * self.cell
        self.goal_tol = config.goal_fraction * self.cell
        self.waypoint = np.minimum(1, self.path_len - 1)
        x0, y0 = self.origin
        self.bounds = (x0, x0 + self.cols * self.cell, y0, y0 + self.rows * self.cell)

    def reset(self) -> None:
        self.waypoint = np.minimum(1, self.path_len - 1)

    def occupied(self, xy: np.ndarray, sel: Optional[np.ndarray] = None) -> np.ndarray:
        """Is each point (B, 2) inside a static obstacle cell (or beyond a blocking wall)?

        ``sel`` restricts the batch to the given agent indices (one point each).
        """
        occ = self.occ if sel is None else self.occ[sel]
        c = np.floor((xy[:, 0] - self.origin[0]) / self.cell).astype(int)
        r = np.floor((xy[:, 1] - self.origin[1]) / self.cell).astype(int)
        inside = (r >= 0) & (r < self.rows) & (c >= 0) & (c < self.cols)
        rc = np.clip(r, 0, self.rows - 1)
        cc = np.clip(c, 0, self.cols - 1)
        hit = occ[np.arange(len(occ)), rc, cc] & inside
        if self.walls_block:
            hit |= ~inside
        return hit

    def clearance(self, xy: np.ndarray, sel: Optional[np.ndarray] = None) -> np.ndarray:
        """Distance from each point (B, 2) to the nearest obstacle cell (and wall, if walls block).

        Only the 3x3 cell neighbourhood is searched, so values are capped at
        one cell size.  Points inside an obstacle, or beyond a blocking wall,
        get zero or a negative value.
        """
        occ_pad = self.occ_pad if sel is None else self.occ_pad[sel]
        x = xy[:, 0]
        y = xy[:, 1]
        gx, gy, occ = neighbourhood_gaps(x, y, occ_pad, self.origin, self.cell)
        best = np.min(np.where(occ, np.hypot(gx, gy), self.cell), axis=1)
        if self.walls_block:
            x0, x1, y0, y1 = self.bounds
            best = np.minimum.reduce([best, x - x0, x1 - x, y - y0, y1 - y])
        return best

    def command(self, pose: np.ndarray, obstacles: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Inputs (v, omega) for poses (B, 3) given moving obstacle positions (B, M, 2)."""
        cfg = self.config
        prof = self.profile
        n = self.size
        if cfg.kind == "zero":
            return np.zeros(n), np.zeros(n)
        if cfg.kind == "straight":
            return np.full(n, prof.v_bounds[1]), np.zeros(n)

        px, py, th = pose[:, 0], pose[:, 1], pose[:, 2]
        tgt = self.centers[self.rows_idx, self.waypoint]
        rho = np.hypot(tgt[:, 0] - px, tgt[:, 1] - py)
        advance = (rho <= self.capture) & (self.waypoint < self.path_len - 1)
        if advance.any():
            self.waypoint = np.where(advance, self.waypoint + 1, self.waypoint)
            tgt = self.centers[self.rows_idx, self.waypoint]
        rho = np.hypot(tgt[:, 0] - px, tgt[:, 1] - py)
        steer = self._detour(px, py, tgt)
        dx = steer[:, 0] - px
        dy = steer[:, 1] - py
        alpha = _wrap(np.arctan2(dy, dx) - th)
        beta = np.where(alpha > 0.5 * np.pi, alpha - np.pi, np.where(alpha < -0.5 * np.pi, alpha + np.pi, alpha))
        togo = np.hypot(dx, dy) + self.beyond[self.rows_idx, self.waypoint]
        v = np.clip(cfg.k_rho * togo * np.cos(alpha), *prof.v_bounds)
        v = np.where(np.abs(beta) > cfg.align_threshold, 0.0, v)
        w = np.clip(cfg.k_alpha * beta, *prof.omega_bounds)
        done = (self.waypoint == self.path_len - 1) & (rho <= self.goal_tol)
        v = np.where(done, 0.0, v)
        w = np.where(done, 0.0, w)

        has_moving = obstacles is not None and obstacles.shape[1] > 0
        if has_moving and cfg.evade_radius > 0:
            # escape from the nearest walker when it gets too close: pick the
            # first unblocked direction fanning out from straight away, drive
            # along it if roughly aligned; turn toward it as fast as allowed
            rx = obstacles[:, :, 0] - px[:, None]
            ry = obstacles[:, :, 1] - py[:, None]
            dist = np.hypot(rx, ry)
            k = np.argmin(dist, axis=1)
            near = dist[self.rows_idx, k] <= cfg.evade_radius
            if near.any():
                sel = np.flatnonzero(near)
                ks = k[sel]
                sx, sy, sth = px[sel], py[sel], th[sel]
                sobs = obstacles[sel]
                esc = np.arctan2(-ry[sel, ks], -rx[sel, ks])
                pick = esc.copy()
                found = np.zeros(len(sel), dtype=bool)
                for off in _ESCAPE_FAN:
                    cand = esc + off
                    free = ~self._blocked_along(sx, sy, np.cos(cand), np.sin(cand), sobs, sel) & ~found
                    pick = np.where(free, cand, pick)
                    found |= free
                a = _wrap(pick - sth)
                b = np.where(a > 0.5 * np.pi, a - np.pi, np.where(a < -0.5 * np.pi, a + np.pi, a))
                drive = found & (np.abs(b) <= cfg.align_threshold)
                ve = np.where(np.abs(a) <= 0.5 * np.pi, prof.v_bounds[1], prof.v_bounds[0])
                v = v.copy()
                w = w.copy()
                v[sel] = np.where(drive, ve, 0.0)
                w[sel] = np.clip(b / prof.dt_model, *prof.omega_bounds)
        return self._guard(v, w, px, py, th, obstacles if has_moving else None)

    def _detour(self, px, py, tgt) -> np.ndarray:
        """Steering targets: the waypoint, or a grid detour back to it for agents pushed off the path.

        An agent is on track while it sits in the waypoint cell or the path
        cell before it; the segment to the waypoint centre then stays inside
        two free cells.  Otherwise it steers to the centre of the next cell of
        a 4-connected shortest route to the waypoint cell.
        """
        c = np.floor((px - self.origin[0]) / self.cell).astype(int)
        r = np.floor((py - self.origin[1]) / self.cell).astype(int)
        k = self.waypoint
        cur = self.path_cells[self.rows_idx, k]
        prev = self.path_cells[self.rows_idx, np.maximum(k - 1, 0)]
        on = ((r == cur[:, 0]) & (c == cur[:, 1])) | ((r == prev[:, 0]) & (c == prev[:, 1]))
        off = np.flatnonzero(~on)
        if not len(off):
            return tgt
        tgt = tgt.copy()
        for b in off:
            hop = self._next_hop(int(b), int(k[b]), int(r[b]), int(c[b]))
            if hop is not None:
                tgt[b, 0] = self.origin[0] + (hop[1] + 0.5) * self.cell
                tgt[b, 1] = self.origin[1] + (hop[0] + 0.5) * self.cell
        return tgt

    def _next_hop(self, b: int, k: int, r: int, c: int) -> Optional[Tuple[int, int]]:
        if not (0 <= r < self.rows and 0 <= c < self.cols) or self.occ[b, r, c]:
            return None
        key = (b, k)
        dist = self._fields.get(key)
        if dist is None:
            dist = _bfs_field(self.occ[b], tuple(self.path_cells[b, k]))
            self._fields[key] = dist
        d = dist[r, c]
        if d <= 0 or d == _UNREACHED:
            return None
        for dr, dc in _NEIGHBOURS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < self.rows and 0 <= cc < self.cols and dist[rr, cc] == d - 1:
                return (rr, cc)
        return None

    def _blocked_along(self, px, py, ux, uy, obstacles, sel=None) -> np.ndarray:
        """Would translating along the unit vectors (ux, uy) approach a static or moving obstacle?"""
        cfg = self.config
        blocked = np.zeros(len(px), dtype=bool)
        probe = cfg.static_probe_fraction * self.cell
        if probe > 0:
            here = self.clearance(np.stack([px, py], axis=1), sel)
            margin = max(cfg.clearance_fraction * self.cell, 1e-9)
            for frac in (1.0 / 3.0, 2.0 / 3.0, 1.0):
                q = np.stack([px + frac * probe * ux, py + frac * probe * uy], axis=1)
                ahead = self.clearance(q, sel)
                blocked |= self.occupied(q, sel) | ((ahead < margin) & (ahead < here))
        if obstacles is not None and cfg.moving_stop_radius > 0:
            rx = obstacles[:, :, 0] - px[:, None]
            ry = obstacles[:, :, 1] - py[:, None]
            dist = np.hypot(rx, ry)
            along = rx * ux[:, None] + ry * uy[:, None]
            ahead = along >= dist * math.cos(cfg.stop_cone)
            blocked |= np.any((dist <= cfg.moving_stop_radius) & ahead, axis=1)
        return blocked

    def _guard(self, v, w, px, py, th, obstacles):
        """Cancel translation toward a static obstacle, a wall or a moving obstacle ahead."""
        sign = np.sign(v)
        sel = np.flatnonzero(sign)
        if not len(sel):
            return v, w
        s = sign[sel]
        obs = None if obstacles is None else obstacles[sel]
        blocked = self._blocked_along(px[sel], py[sel], np.cos(th[sel]) * s, np.sin(th[sel]) * s, obs, sel)
        v = v.copy()
        v[sel] = np.where(blocked, 0.0, v[sel])
        return v, w


def navigation_controller(
    state: ModelState,
    scenario: Scenario,
    config: ControllerConfig,
    profile: PlatformProfile,
    waypoint_index: Optional[int] = None,
    obstacles: Sequence[Tuple[float, float]] = (),
    walls_block: bool = True,
) -> Tuple[ModelInput, int]:
    """Single-agent form of the law.  Returns the input and the (possibly advanced) waypoint index."""
    nav = NavigationBatch([scenario], profile, config, walls_block)
    if waypoint_index is not None:
        nav.waypoint = np.array([min(max(int(waypoint_index), 0), int(nav.path_len[0]) - 1)])
    obs = np.asarray(obstacles, dtype=float).reshape(1, -1, 2)
    v, w = nav.command(np.array([state.as_tuple()]), obs)
    return ModelInput(float(v[0]), float(w[0])), int(nav.waypoint[0])


class NavigationController:
    """Stateful single-agent controller, usable as ``controller(state, j)`` in rollouts."""

    def __init__(
        self,
        scenario: Scenario,
        config: ControllerConfig,
        profile: PlatformProfile,
        walls_block: bool = True,
    ) -> None:
        self._nav = NavigationBatch([scenario], profile, config, walls_block)
        self.obstacles = np.zeros((1, 0, 2))

    @property
    def waypoint(self) -> int:
        return int(self._nav.waypoint[0])

    @property
    def path(self) -> List[Tuple[int, int]]:
        return self._nav.cell_paths[0]

    def set_obstacles(self, positions: Sequence[Tuple[float, float]]) -> None:
        self.obstacles = np.asarray(positions, dtype=float).reshape(1, -1, 2)

    def __call__(self, state: ModelState, j: int = 0) -> ModelInput:
        v, w = self._nav.command(np.array([state.as_tuple()]), self.obstacles)
        return ModelInput(float(v[0]), float(w[0]))
