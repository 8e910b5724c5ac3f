"""Acceptance checks. Each test prints one PASS/FAIL line and then asserts the same verdict.

Run alone with ``pytest tests/test_acceptance.py``; the statistical ones take about 20 minutes on one core.
"""

import functools
import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from simgap import cli
from simgap.config import default_config
from simgap.gap_estimator import collect_samples, estimate_gap, validate_gap
from simgap.runtime import Stage, stream
from simgap.scenario_core import confidence_scalar, violation_bound
from simgap.uncertain_model import DisturbanceSet, coverage_test, sample_disturbances
from simgap.verification.harness import deploy_test, validate_verification, verify_controller
from simgap.verification.metric import SafetyConfig, safety_metric
from simgap.verification.scenarios import (
    QUADRUPED_THETA,
    ROBOTARIUM_THETA,
    goal_distance_oracle,
    sample_scenario,
    scenario_from_ascii,
    shortest_path,
)

SEEDS = range(20)
R_CFG = default_config("robotarium")
Q_CFG = default_config("quadruped")


@functools.lru_cache(maxsize=None)
def certified_gap(seed):
    cfg = R_CFG
    train = collect_samples(cfg.profile, 600, seed, Stage.GAP, cfg.gap.chains, 1, cfg.gap.gains)
    return estimate_gap(train, 0.005, cfg.profile.name, seed)


def test_1_certificate_math(acceptance):
    t0 = time.perf_counter()
    checks = {
        "C(600,0.005) in [0.9506,0.9507]": (confidence_scalar(600, 0.005), 0.9506, 0.9507),
        "C(100,0.03) in [0.952,0.953]": (confidence_scalar(100, 0.03), 0.952, 0.953),
        "C(300,0.01) in [0.9509,0.9510]": (confidence_scalar(300, 0.01), 0.9509, 0.9510),
    }
    ok_intervals = {k: lo <= v <= hi for k, (v, lo, hi) in checks.items()}
    grid = [(n, e) for n in (1, 10, 100, 300, 600) for e in (0.001, 0.005, 0.03, 0.2)]
    worst = max(abs(violation_bound(n, 1, e) - (1 - e) ** n) for n, e in grid)
    elapsed = time.perf_counter() - t0
    ok = all(ok_intervals.values()) and worst <= 1e-10 and elapsed < 1.0
    detail = "; ".join(f"{k}: {checks[k][0]:.7f} {'ok' if v else 'OUT'}" for k, v in ok_intervals.items())
    acceptance(1, ok, f"{detail}; grid max err {worst:.1e}; {elapsed:.3f}s")
    assert ok


@pytest.mark.slow
def test_2_gap_violation_across_seeds(acceptance):
    t0 = time.perf_counter()
    cfg = R_CFG
    passed = 0
    worst = 0.0
    for seed in SEEDS:
        gap = certified_gap(seed)
        fresh = collect_samples(cfg.profile, 1800, seed, Stage.GAP_FRESH, cfg.gap.chains, 1, cfg.gap.gains)
        v = validate_gap(gap, fresh)
        passed += v.violation <= 0.005
        worst = max(worst, v.violation)
    elapsed = time.perf_counter() - t0
    ok = passed >= 18 and elapsed < 600
    acceptance(2, ok, f"{passed}/20 seeds with violation <= 0.005 (worst {worst:.4f}); {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_3_reachable_set_containment(acceptance):
    t0 = time.perf_counter()
    cfg = R_CFG
    w = tuple(cfg.profile.norm_weights)
    passed = 0
    lowest = 1.0
    for seed in SEEDS:
        gap = certified_gap(seed)
        rep = coverage_test(cfg.profile, DisturbanceSet(gap.gap, 3, w), 1800, seed, 0.005, cfg.gap.chains, 1, cfg.gap.gains)
        passed += rep.fraction >= 0.995
        lowest = min(lowest, rep.fraction)
    zero = coverage_test(cfg.profile, DisturbanceSet(0.0, 3, w), 1800, 0, 0.005, cfg.gap.chains, 1, cfg.gap.gains)
    elapsed = time.perf_counter() - t0
    ok = passed >= 18 and zero.fraction < 0.05 and elapsed < 600
    acceptance(
        3, ok,
        f"{passed}/20 seeds with coverage >= 0.995 (lowest {lowest:.4f}); radius 0 gives {zero.fraction:.4f}; {elapsed:.0f}s",
    )
    assert ok


@pytest.mark.slow
def test_4_safety_cutoff_across_seeds(acceptance):
    t0 = time.perf_counter()
    cfg = R_CFG
    setup = cfg.setup()
    w = tuple(cfg.profile.norm_weights)
    passed = 0
    rows = []
    for seed in SEEDS:
        dset = DisturbanceSet(certified_gap(seed).gap, 3, w)
        res = verify_controller(setup, dset, 300, 0.01, seed)
        rep, _ = validate_verification(res, setup, dset, 20000, seed)
        good = rep.violation <= 0.01 and rep.cutoff >= res.min_safety
        passed += good
        rows.append(f"{res.min_safety:g}/{rep.violation:.4f}")
    elapsed = time.perf_counter() - t0
    # the time budget assumes 8 workers; this run uses one
    ok = passed >= 18
    acceptance(4, ok, f"{passed}/20 seeds with violation <= 0.01 and cutoff >= s*; s*/violation {' '.join(rows)}; {elapsed:.0f}s")
    assert ok


def _pipeline_deploy(cfg):
    prof = cfg.profile
    train = collect_samples(prof, cfg.gap.num_samples, cfg.master_seed, Stage.GAP, cfg.gap.chains, 1, cfg.gap.gains)
    gap = estimate_gap(train, cfg.gap.epsilon, prof.name, cfg.master_seed)
    dset = DisturbanceSet(gap.gap, 3, tuple(prof.norm_weights))
    res = verify_controller(cfg.setup(), dset, cfg.verification.num_samples, cfg.verification.epsilon, cfg.master_seed)
    rep = deploy_test(cfg.setup(), cfg.deploy.num_runs, cfg.master_seed, cfg.deploy.max_ticks, res.passed)
    return res.passed, rep.successes, len(rep.runs)


@pytest.mark.slow
def test_5_deployment_transfer(acceptance):
    t0 = time.perf_counter()
    r_ver, r_ok, r_n = _pipeline_deploy(R_CFG)
    q_ver, q_ok, q_n = _pipeline_deploy(Q_CFG)
    elapsed = time.perf_counter() - t0
    ok = r_ver and q_ver and r_ok >= 39 and q_ok >= 9 and elapsed < 600
    acceptance(5, ok, f"R {r_ok}/{r_n} (verified {r_ver}), Q {q_ok}/{q_n} (verified {q_ver}); {elapsed:.0f}s")
    assert ok


def test_6_oracle_equivalence(acceptance):
    t0 = time.perf_counter()
    mismatches = 0
    for spec, tag in ((QUADRUPED_THETA, 20), (ROBOTARIUM_THETA, 21)):
        for i in range(1000):
            sc = sample_scenario(spec, stream(0, tag, i))
            mismatches += len(shortest_path(sc)) - 1 != goal_distance_oracle(sc)
    samples = collect_samples(R_CFG.profile, 300, 7, Stage.GAP, 4, 1, R_CFG.gap.gains)
    naive = samples[0].gap_value
    for s in samples:
        if s.gap_value > naive:
            naive = s.gap_value
    gap_ok = estimate_gap(samples, 0.005).gap == naive
    draws = sample_disturbances(DisturbanceSet(1.0), stream(0, 22, 0), 100_000)
    mean_norm = float(np.linalg.norm(draws, axis=1).mean())
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and gap_ok and abs(mean_norm - 0.75) <= 0.01 and elapsed < 60
    acceptance(
        6, ok,
        f"BFS vs Bellman mismatches {mismatches}/2000; max-scan equal {gap_ok}; mean norm {mean_norm:.4f}; {elapsed:.1f}s",
    )
    assert ok


def _strip(path):
    doc = json.loads(path.read_text())
    doc.pop("created", None)
    return doc


def test_7_determinism(acceptance, tmp_path):
    cfg = R_CFG
    outs = []
    for workers in (1, 8, 1, 8):
        out = tmp_path / f"run{len(outs)}"
        out.mkdir()
        cli.cmd_estimate_gap(cfg, out, workers)
        cli.cmd_verify(cfg, out, workers, out / cli.GAP_RESULT)
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    same = True
    for out in outs[1:]:
        same &= names == sorted(p.name for p in out.iterdir())
        for name in names:
            a, b = outs[0] / name, out / name
            if name.endswith(".json"):
                same &= _strip(a) == _strip(b)
            else:
                same &= a.read_bytes() == b.read_bytes()
    acceptance(7, same, f"{len(names)} output files identical across 4 runs at workers 1, 8, 1, 8")
    assert same


# handcrafted trajectories ---------------------------------------------------------

L_SHAPE = scenario_from_ascii(["..G", ".##", ".##", ".##", "S##"], cell_size=0.5)
OPEN = scenario_from_ascii(["....G", ".#...", "S...."], cell_size=0.5)
CFG8 = SafetyConfig(inflation=0.05, collision_radius=0.15)


def _line(points, step=0.02):
    out = [np.asarray(points[0], float)]
    for a, b in zip(points, points[1:]):
        a, b = np.asarray(a, float), np.asarray(b, float)
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / step)))
        out.extend(a + (b - a) * k / n for k in range(1, n + 1))
    return np.array([[p[0], p[1], 0.0] for p in out])


def _via(sc, cells):
    return [sc.cell_center(c) for c in cells]


def _with_walker(sc, traj, walker_path):
    """Attach one moving obstacle following ``walker_path`` (one xy per trajectory step)."""
    walker_path = np.asarray(walker_path, float)
    x, y = walker_path[0]
    sc = replace(sc, moving_obstacles=((float(x), float(y), 0.0),))
    return traj, sc, walker_path[:, None, :]


def _cases():
    safe, crash = [], []
    s = lambda traj, sc=L_SHAPE, obs=None: safe.append((traj, sc, obs))
    c = lambda traj, sc=L_SHAPE, obs=None: crash.append((traj, sc, obs))

    # safe
    s(_line(_via(L_SHAPE, [(0, 0), (4, 0), (4, 2)])))
    s(_line(_via(L_SHAPE, [(0, 0), (2, 0)])))
    s(np.tile([*L_SHAPE.cell_center((0, 0)), 0.0], (50, 1)))
    s(_line(_via(OPEN, [(0, 0), (0, 4), (2, 4)])), OPEN)
    s(_line(_via(OPEN, [(0, 0), (0, 2)])), OPEN)
    s(_line(_via(L_SHAPE, [(0, 0), (4, 0), (4, 2)]) + [L_SHAPE.cell_center((4, 2))] * 2))
    # hugging the obstacle column at exactly 0.06 m, outside the 0.05 m inflation
    s(_line([L_SHAPE.cell_center((0, 0)), (0.44, 0.25), (0.44, 2.25), L_SHAPE.cell_center((4, 2))]))
    t = _line(_via(OPEN, [(0, 0), (0, 4)]))
    far = np.column_stack([np.full(len(t), 2.25), np.full(len(t), 1.25)])
    s(*_with_walker(OPEN, t, far))
    # walker crosses the path well after the agent has passed
    lane = np.column_stack([np.full(len(t), 0.75), np.linspace(1.4, 0.25, len(t))])
    s(*_with_walker(OPEN, t, lane))
    s(_line([OPEN.cell_center((0, 0)), (0.25, 0.06), (2.2, 0.06), OPEN.cell_center((0, 4))]), OPEN)

    # crashing
    c(_line(_via(L_SHAPE, [(0, 0), (0, 1)])))
    c(_line([L_SHAPE.cell_center((0, 0)), (0.46, 0.25)]))  # inside the inflation band
    c(_line([L_SHAPE.cell_center((0, 0)), (-0.1, 0.25)]))  # through the left wall
    c(_line([L_SHAPE.cell_center((0, 0)), (0.25, 0.03)]))  # within inflation of the floor
    c(_line(_via(OPEN, [(0, 0), (1, 1), (2, 4)])), OPEN)  # cuts through the obstacle
    c(_line(_via(L_SHAPE, [(0, 0), (4, 0), (4, 2)]) + [(1.25, 2.4), (1.25, 1.75)]))
    c(_line([L_SHAPE.cell_center((0, 0)), (0.25, 0.6), (0.7, 0.6)]))
    t = _line(_via(OPEN, [(0, 0), (0, 4)]))
    head_on = np.column_stack([np.linspace(2.25, 0.25, len(t)), np.full(len(t), 0.25)])
    c(*_with_walker(OPEN, t, head_on))
    parked = np.column_stack([np.full(len(t), 1.25), np.full(len(t), 0.35)])
    c(*_with_walker(OPEN, t, parked))
    c(_line([OPEN.cell_center((0, 0)), (2.25, 0.25), (2.25, 1.6)]), OPEN)  # leaves through the top
    return safe, crash


def test_8_safety_metric_iff(acceptance):
    safe, crash = _cases()
    safe_vals = [safety_metric(t, sc, obs, CFG8).value for t, sc, obs in safe]
    crash_vals = [safety_metric(t, sc, obs, CFG8).value for t, sc, obs in crash]
    ok = len(safe) == len(crash) == 10 and all(v >= 0 for v in safe_vals) and all(v == -1.0 for v in crash_vals)
    acceptance(
        8, ok,
        f"safe values {[round(v, 2) for v in safe_vals]}; crashing values {[round(v, 2) for v in crash_vals]}",
    )
    assert ok
