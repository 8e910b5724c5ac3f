"""Randomized grid-world test scenarios and 4-connected path search."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

Cell = Tuple[int, int]  # (row, col); row 0 is the bottom row (lowest y)

# neighbour expansion in (row, col) order
_NEIGHBOURS = ((-1, 0), (0, -1), (0, 1), (1, 0))


class ScenarioSamplingError(RuntimeError):
    """The scenario space is over-constrained: no feasible draw within budget."""


class InfeasibleScenario(ValueError):
    """No 4-connected path from the start cell to any goal."""


@dataclass(frozen=True)
class ThetaSpec:
    """Parameter space for randomized scenarios."""

    rows: int
    cols: int
    cell_size: float
    origin: Tuple[float, float]
    n_obstacles: int
    n_goals: int
    n_moving: int = 0
    start_margin: float = 0.25  # fraction of a cell kept clear around the initial position
    moving_clearance: float = 0.6  # m, moving obstacles start at least this far from the start centre
    max_tries: int = 1000

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must have at least one cell")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if min(self.n_obstacles, self.n_goals - 1, self.n_moving) < 0:
            raise ValueError("need n_obstacles >= 0, n_goals >= 1, n_moving >= 0")
        if not 0.0 <= self.start_margin < 0.5:
            raise ValueError("start_margin must lie in [0, 0.5)")
        if self.max_tries < 1:
            raise ValueError("max_tries must be >= 1")

    @property
    def width(self) -> float:
        return self.cols * self.cell_size

    @property
    def height(self) -> float:
        return self.rows * self.cell_size

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        x0, y0 = self.origin
        return (x0, x0 + self.width, y0, y0 + self.height)


ROBOTARIUM_THETA = ThetaSpec(
    rows=5, cols=8, cell_size=0.4, origin=(-1.6, -1.0), n_obstacles=10, n_goals=3, n_moving=3,
    moving_clearance=0.6,
)
QUADRUPED_THETA = ThetaSpec(
    rows=5, cols=5, cell_size=1.0, origin=(-2.5, -2.5), n_obstacles=5, n_goals=1, n_moving=0,
    start_margin=0.35,
)
THETA_SPECS: Dict[str, ThetaSpec] = {"robotarium": ROBOTARIUM_THETA, "quadruped": QUADRUPED_THETA}


@dataclass(frozen=True)
class Scenario:
    rows: int
    cols: int
    cell_size: float
    origin: Tuple[float, float]
    static_obstacles: FrozenSet[Cell]
    goals: FrozenSet[Cell]
    start_cell: Cell
    moving_obstacles: Tuple[Tuple[float, float, float], ...] = ()  # (x, y, heading)
    seed: int = 0

    @property
    def grid_width(self) -> int:
        return self.cols

    @property
    def grid_height(self) -> int:
        return self.rows

    def cell_center(self, cell: Cell) -> Tuple[float, float]:
        r, c = cell
        return (
            self.origin[0] + (c + 0.5) * self.cell_size,
            self.origin[1] + (r + 0.5) * self.cell_size,
        )

    def cell_of(self, x: float, y: float) -> Optional[Cell]:
        c = math.floor((x - self.origin[0]) / self.cell_size)
        r = math.floor((y - self.origin[1]) / self.cell_size)
        if 0 <= r < self.rows and 0 <= c < self.cols:
            return (r, c)
        return None

    def in_grid(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.rows and 0 <= cell[1] < self.cols

    def occupancy(self) -> np.ndarray:
        occ = np.zeros((self.rows, self.cols), dtype=bool)
        for r, c in self.static_obstacles:
            occ[r, c] = True
        return occ

    def same_grid(self, other: "Scenario") -> bool:
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and self.cell_size == other.cell_size
            and tuple(self.origin) == tuple(other.origin)
        )

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "cell_size": self.cell_size,
            "origin": list(self.origin),
            "static_obstacles": sorted(list(c) for c in self.static_obstacles),
            "goals": sorted(list(c) for c in self.goals),
            "start_cell": list(self.start_cell),
            "moving_obstacles": [list(m) for m in self.moving_obstacles],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            rows=int(d["rows"]),
            cols=int(d["cols"]),
            cell_size=float(d["cell_size"]),
            origin=tuple(d["origin"]),
            static_obstacles=frozenset(tuple(c) for c in d["static_obstacles"]),
            goals=frozenset(tuple(c) for c in d["goals"]),
            start_cell=tuple(d["start_cell"]),
            moving_obstacles=tuple(tuple(m) for m in d.get("moving_obstacles", [])),
            seed=int(d.get("seed", 0)),
        )


def _validate_layout(sc: Scenario) -> None:
    cells = [sc.start_cell, *sc.goals, *sc.static_obstacles]
    for cell in cells:
        if not sc.in_grid(cell):
            raise ValueError(f"cell {cell} outside the {sc.rows}x{sc.cols} grid")
    if sc.start_cell in sc.goals or sc.start_cell in sc.static_obstacles or sc.goals & sc.static_obstacles:
        raise ValueError("start, goal and obstacle cells must be pairwise disjoint")


def shortest_path(scenario: Scenario) -> List[Cell]:
    """Breadth-first shortest 4-connected path from the start cell to the nearest goal.

    Neighbours are expanded in (row, col) order, so ties resolve
    deterministically.  The returned list includes both end cells.
    """
    _validate_layout(scenario)
    start = scenario.start_cell
    parent: Dict[Cell, Optional[Cell]] = {start: None}
    queue = deque([start])
    blocked = scenario.static_obstacles
    while queue:
        cell = queue.popleft()
        if cell in scenario.goals:
            path = [cell]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1]
        r, c = cell
        for dr, dc in _NEIGHBOURS:
            nxt = (r + dr, c + dc)
            if nxt in parent or nxt in blocked or not scenario.in_grid(nxt):
                continue
            parent[nxt] = cell
            queue.append(nxt)
    raise InfeasibleScenario(f"no path from {start} to any goal in {sorted(scenario.goals)}")


def bellman_distances(scenario: Scenario) -> np.ndarray:
    """Grid distances from the start by plain value iteration (inf where unreachable)."""
    occ = scenario.occupancy()
    dist = np.full((scenario.rows, scenario.cols), np.inf)
    dist[scenario.start_cell] = 0.0
    while True:
        padded = np.pad(dist, 1, constant_values=np.inf)
        best = np.minimum.reduce(
            [padded[:-2, 1:-1], padded[2:, 1:-1], padded[1:-1, :-2], padded[1:-1, 2:]]
        )
        new = np.where(occ, np.inf, np.minimum(dist, best + 1.0))
        if np.array_equal(new, dist):
            return dist
        dist = new


def goal_distance_oracle(scenario: Scenario) -> float:
    d = bellman_distances(scenario)
    return min(d[g] for g in scenario.goals)


def is_feasible(scenario: Scenario) -> bool:
    try:
        shortest_path(scenario)
    except InfeasibleScenario:
        return False
    return True


def start_box(scenario: Scenario, margin: float) -> Tuple[float, float, float, float]:
    """Region of the start cell from which initial positions are drawn."""
    cx, cy = scenario.cell_center(scenario.start_cell)
    half = (0.5 - margin) * scenario.cell_size
    return (cx - half, cx + half, cy - half, cy + half)


def _moving_candidates(spec: ThetaSpec, obstacles: FrozenSet[Cell], start: Cell) -> List[Cell]:
    x0, y0 = spec.origin
    sx = x0 + (start[1] + 0.5) * spec.cell_size
    sy = y0 + (start[0] + 0.5) * spec.cell_size
    out = []
    for r in range(spec.rows):
        for c in range(spec.cols):
            if (r, c) in obstacles or (r, c) == start:
                continue
            cx = x0 + (c + 0.5) * spec.cell_size
            cy = y0 + (r + 0.5) * spec.cell_size
            if math.hypot(cx - sx, cy - sy) >= spec.moving_clearance:
                out.append((r, c))
    return out


def sample_scenario(spec: ThetaSpec, rng: np.random.Generator, seed: int = 0) -> Scenario:
    """Rejection-sample a uniformly random feasible layout.

    Obstacles, goals and the start occupy distinct cells drawn uniformly
    without replacement; layouts with no start-to-goal path are redrawn.
    Moving obstacles start uniformly inside free cells away from the start.
    """
    n_cells = spec.rows * spec.cols
    needed = spec.n_obstacles + spec.n_goals + 1
    if needed > n_cells:
        raise ScenarioSamplingError(
            f"{spec.n_obstacles} obstacles + {spec.n_goals} goals + start exceed {n_cells} cells"
        )
    for _ in range(spec.max_tries):
        picks = rng.choice(n_cells, size=needed, replace=False)
        cells = [(int(p) // spec.cols, int(p) % spec.cols) for p in picks]
        start = cells[0]
        goals = frozenset(cells[1 : 1 + spec.n_goals])
        obstacles = frozenset(cells[1 + spec.n_goals :])
        candidate = Scenario(spec.rows, spec.cols, spec.cell_size, tuple(spec.origin), obstacles, goals, start, (), seed)
        if is_feasible(candidate):
            break
    else:
        raise ScenarioSamplingError(f"no feasible scenario after {spec.max_tries} draws")

    moving = []
    if spec.n_moving:
        free = _moving_candidates(spec, obstacles, start)
        if not free:
            raise ScenarioSamplingError("no free cell far enough from the start for moving obstacles")
        for _ in range(spec.n_moving):
            r, c = free[int(rng.integers(len(free)))]
            x = spec.origin[0] + (c + rng.random()) * spec.cell_size
            y = spec.origin[1] + (r + rng.random()) * spec.cell_size
            h = rng.uniform(0.0, 2.0 * math.pi)
            moving.append((float(x), float(y), float(h)))
    return Scenario(
        spec.rows, spec.cols, spec.cell_size, tuple(spec.origin), obstacles, goals, start, tuple(moving), seed
    )


def scenario_from_ascii(rows: Sequence[str], cell_size: float = 1.0, origin=(0.0, 0.0)) -> Scenario:
    """Build a scenario from a picture; the first string is the top row.

    ``#`` obstacle, ``G`` goal, ``S`` start, anything else free.
    """
    n_rows = len(rows)
    n_cols = len(rows[0])
    obstacles, goals, start = set(), set(), None
    for i, line in enumerate(rows):
        if len(line) != n_cols:
            raise ValueError("ragged scenario picture")
        r = n_rows - 1 - i
        for c, ch in enumerate(line):
            if ch == "#":
                obstacles.add((r, c))
            elif ch == "G":
                goals.add((r, c))
            elif ch == "S":
                start = (r, c)
    if start is None:
        raise ValueError("picture has no start cell")
    return Scenario(n_rows, n_cols, cell_size, tuple(origin), frozenset(obstacles), frozenset(goals), start)
