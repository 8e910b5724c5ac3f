import math

import numpy as np
import pytest

from simgap.runtime import stream
from simgap.verification.scenarios import (
    QUADRUPED_THETA,
    ROBOTARIUM_THETA,
    InfeasibleScenario,
    Scenario,
    ScenarioSamplingError,
    ThetaSpec,
    bellman_distances,
    goal_distance_oracle,
    is_feasible,
    sample_scenario,
    scenario_from_ascii,
    shortest_path,
    start_box,
)


def is_connected_path(sc, path):
    for a, b in zip(path, path[1:]):
        if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
            return False
    return all(sc.in_grid(c) and c not in sc.static_obstacles for c in path)


def test_adjacent_goal():
    sc = scenario_from_ascii(["SG"])
    assert shortest_path(sc) == [(0, 0), (0, 1)]


def test_corner_to_corner():
    sc = scenario_from_ascii(["..G", "...", "S.."])
    path = shortest_path(sc)
    assert len(path) == 5
    assert path[0] == (0, 0) and path[-1] == (2, 2)


def test_tie_break_is_row_first():
    # neighbour order (row-1, col-1, col+1, row+1): from the bottom-left start
    # the first expansion reaching the goal goes right along row 0
    sc = scenario_from_ascii([".G", "S."])
    assert shortest_path(sc) == [(0, 0), (0, 1), (1, 1)]


def test_nearest_of_several_goals():
    sc = scenario_from_ascii(["G....", "##...", "S...G"])
    assert shortest_path(sc)[-1] == (0, 4)
    assert len(shortest_path(sc)) == 5


def test_detour_around_wall():
    sc = scenario_from_ascii(["S#G", ".#.", "..."])
    path = shortest_path(sc)
    assert len(path) - 1 == 6
    assert is_connected_path(sc, path)


def test_infeasible_rejected():
    sc = scenario_from_ascii(["S#G"])
    assert not is_feasible(sc)
    with pytest.raises(InfeasibleScenario):
        shortest_path(sc)


def test_overlapping_cells_rejected():
    sc = Scenario(2, 2, 1.0, (0.0, 0.0), frozenset({(0, 1)}), frozenset({(0, 1)}), (0, 0))
    with pytest.raises(ValueError):
        shortest_path(sc)


@pytest.mark.parametrize("spec", [QUADRUPED_THETA, ROBOTARIUM_THETA])
def test_sampled_scenarios_are_valid(spec):
    for i in range(200):
        sc = sample_scenario(spec, stream(0, 7, i), seed=i)
        assert len(sc.static_obstacles) == spec.n_obstacles
        assert len(sc.goals) == spec.n_goals
        assert len(sc.moving_obstacles) == spec.n_moving
        assert sc.start_cell not in sc.goals | sc.static_obstacles
        assert not sc.goals & sc.static_obstacles
        path = shortest_path(sc)
        assert is_connected_path(sc, path) and path[-1] in sc.goals
        assert len(path) - 1 == goal_distance_oracle(sc)


@pytest.mark.parametrize("spec", [QUADRUPED_THETA, ROBOTARIUM_THETA])
def test_bfs_matches_bellman(spec):
    for i in range(300):
        sc = sample_scenario(spec, stream(1, 7, i))
        assert len(shortest_path(sc)) - 1 == goal_distance_oracle(sc)


def test_bellman_marks_unreachable():
    sc = scenario_from_ascii(["S#G"])
    d = bellman_distances(sc)
    assert d[0, 0] == 0 and math.isinf(d[0, 2]) and math.isinf(d[0, 1])


def test_moving_obstacles_start_away_from_start():
    spec = ROBOTARIUM_THETA
    for i in range(200):
        sc = sample_scenario(spec, stream(2, 7, i))
        sx, sy = sc.cell_center(sc.start_cell)
        for x, y, h in sc.moving_obstacles:
            cell = sc.cell_of(x, y)
            assert cell is not None and cell != sc.start_cell
            assert cell not in sc.static_obstacles
            assert 0.0 <= h < 2 * math.pi


def test_no_obstacles_first_try():
    spec = ThetaSpec(5, 5, 1.0, (0.0, 0.0), 0, 1, max_tries=1)
    for i in range(50):
        assert is_feasible(sample_scenario(spec, stream(3, 7, i)))


def test_overfull_spec_rejected():
    spec = ThetaSpec(3, 3, 1.0, (0.0, 0.0), 8, 1)
    with pytest.raises(ScenarioSamplingError):
        sample_scenario(spec, stream(0, 7, 0))


def test_rejection_budget():
    # a 1x3 strip with the obstacle drawn into the middle half the time; one try is not always enough
    spec = ThetaSpec(1, 3, 1.0, (0.0, 0.0), 1, 1, max_tries=1)
    failures = 0
    for i in range(100):
        try:
            sample_scenario(spec, stream(4, 7, i))
        except ScenarioSamplingError:
            failures += 1
    assert 0 < failures < 100


def test_sampling_deterministic():
    a = sample_scenario(ROBOTARIUM_THETA, stream(5, 7, 0))
    b = sample_scenario(ROBOTARIUM_THETA, stream(5, 7, 0))
    assert a == b


def test_geometry_helpers():
    sc = scenario_from_ascii(["S.G"], cell_size=0.5, origin=(-1.0, 2.0))
    assert sc.cell_center((0, 2)) == (0.25, 2.25)
    assert sc.cell_of(0.3, 2.1) == (0, 2)
    assert sc.cell_of(0.6, 2.1) is None
    lo_x, hi_x, lo_y, hi_y = start_box(sc, 0.25)
    assert (lo_x, hi_x) == pytest.approx((-0.875, -0.625))
    assert (lo_y, hi_y) == pytest.approx((2.125, 2.375))


def test_dict_round_trip():
    sc = sample_scenario(ROBOTARIUM_THETA, stream(6, 7, 0), seed=6)
    assert Scenario.from_dict(sc.to_dict()) == sc


def test_spec_validation():
    with pytest.raises(ValueError):
        ThetaSpec(0, 5, 1.0, (0, 0), 0, 1)
    with pytest.raises(ValueError):
        ThetaSpec(5, 5, 1.0, (0, 0), 0, 0)
    with pytest.raises(ValueError):
        ThetaSpec(5, 5, 1.0, (0, 0), 0, 1, start_margin=0.5)


def test_default_grids():
    assert (ROBOTARIUM_THETA.cols, ROBOTARIUM_THETA.rows) == (8, 5)
    assert (ROBOTARIUM_THETA.n_obstacles, ROBOTARIUM_THETA.n_goals, ROBOTARIUM_THETA.n_moving) == (10, 3, 3)
    assert (QUADRUPED_THETA.cols, QUADRUPED_THETA.rows) == (5, 5)
    assert (QUADRUPED_THETA.n_obstacles, QUADRUPED_THETA.n_goals, QUADRUPED_THETA.n_moving) == (5, 1, 0)
    assert np.allclose(ROBOTARIUM_THETA.bounds, (-1.6, 1.6, -1.0, 1.0))
