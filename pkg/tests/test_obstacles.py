import math

import numpy as np
import pytest

from simgap.runtime import stream
from simgap.verification.obstacles import ObstacleConfig, moving_obstacle_step, step_obstacles

BOUNDS = (-1.6, 1.6, -1.0, 1.0)
DT = 0.033


def test_zero_noise_is_straight_line():
    cfg = ObstacleConfig(speed=0.1, heading_noise=0.0)
    pose = (0.0, 0.0, 0.3)
    for _ in range(100):
        pose = moving_obstacle_step(pose, DT, BOUNDS, cfg, stream(0, 8, 0))
    assert pose[0] == pytest.approx(100 * 0.1 * DT * math.cos(0.3))
    assert pose[1] == pytest.approx(100 * 0.1 * DT * math.sin(0.3))
    assert pose[2] == pytest.approx(0.3)


def test_reflection_off_right_wall():
    cfg = ObstacleConfig(speed=1.0, heading_noise=0.0)
    x, y, h = moving_obstacle_step((1.59, 0.0, 0.0), 0.02, BOUNDS, cfg)
    assert x == pytest.approx(1.59) and y == 0.0
    assert math.cos(h) == pytest.approx(-1.0)


def test_reflection_off_floor():
    cfg = ObstacleConfig(speed=1.0, heading_noise=0.0)
    x, y, h = moving_obstacle_step((0.0, -0.99, -math.pi / 2), 0.02, BOUNDS, cfg)
    assert y == pytest.approx(-0.99)
    assert math.sin(h) == pytest.approx(1.0)


def test_stays_inside_workspace():
    cfg = ObstacleConfig()
    rng = stream(1, 8, 0)
    pose = (1.5, 0.9, 0.7)
    for _ in range(20000):
        pose = moving_obstacle_step(pose, DT, BOUNDS, cfg, rng)
        assert BOUNDS[0] <= pose[0] <= BOUNDS[1] and BOUNDS[2] <= pose[1] <= BOUNDS[3]


def test_reproducible():
    def path(seed):
        rng = stream(seed, 8, 0)
        pose = (0.0, 0.0, 0.0)
        out = []
        for _ in range(200):
            pose = moving_obstacle_step(pose, DT, BOUNDS, ObstacleConfig(), rng)
            out.append(pose)
        return out

    assert path(3) == path(3)
    assert path(3) != path(4)


def test_increment_range():
    cfg = ObstacleConfig(speed=0.0, heading_noise=0.3)
    rng = stream(2, 8, 0)
    for _ in range(1000):
        _, _, h = moving_obstacle_step((0.0, 0.0, 0.0), DT, BOUNDS, cfg, rng)
        assert -0.3 <= h <= 0.3


def test_vectorized_matches_scalar():
    cfg = ObstacleConfig()
    rng = stream(5, 8, 0)
    xy = rng.uniform((-1.6, -1.0), (1.6, 1.0), (7, 2))
    h = rng.uniform(0, 2 * math.pi, 7)
    poses = [(float(a), float(b), float(c)) for (a, b), c in zip(xy, h)]
    for _ in range(500):
        inc = rng.uniform(-0.3, 0.3, 7)
        xy, h = step_obstacles(xy, h, inc, DT, BOUNDS, cfg)
        poses = [moving_obstacle_step(p, DT, BOUNDS, cfg, increment=float(d)) for p, d in zip(poses, inc)]
    assert np.allclose(xy, [p[:2] for p in poses], atol=1e-12)
    assert np.allclose(np.cos(h), [math.cos(p[2]) for p in poses], atol=1e-12)


def test_long_run_spreads_over_workspace():
    cfg = ObstacleConfig()
    rng = stream(6, 8, 0)
    n = 40
    xy = np.zeros((n, 2))
    h = rng.uniform(0, 2 * math.pi, n)
    visits = np.zeros((5, 8), dtype=int)
    for _ in range(6000):
        xy, h = step_obstacles(xy, h, rng.uniform(-0.3, 0.3, n), DT, BOUNDS, cfg)
        c = np.clip(((xy[:, 0] + 1.6) / 0.4).astype(int), 0, 7)
        r = np.clip(((xy[:, 1] + 1.0) / 0.4).astype(int), 0, 4)
        np.add.at(visits, (r, c), 1)
    # every cell of the 8x5 grid is visited, including the corners
    assert np.all(visits > 0)


def test_config_validation():
    with pytest.raises(ValueError):
        ObstacleConfig(speed=-0.1)
