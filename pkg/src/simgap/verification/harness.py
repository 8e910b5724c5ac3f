"""Monte Carlo verification against the uncertain model, and closed-loop deployment.

Each verification trial ``i`` owns the random stream ``(master_seed, stage,
i)``: it draws its scenario, initial pose, disturbance sequence and the
moving obstacles' heading increments from that stream alone.  Trials are
simulated in fixed-size batches (``batch_size``) so results do not depend on
the worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..dynamics import (
    ModelInput,
    ModelState,
    PlatformProfile,
    embed_state,
    extend_input,
    run_plant,
)
from ..runtime import Stage, chunks, pmap, stream
from ..scenario_core import Certificate, EmpiricalDistribution, empirical_cutoff, empirical_violation
from ..uncertain_model import DisturbanceSet, UncertainTrajectory, sample_disturbances
from .controller import ControllerConfig, NavigationBatch
from .metric import SafetyConfig, SafetyValue, neighbourhood_gaps, padded_occupancy
from .obstacles import ObstacleConfig, step_obstacles
from .scenarios import Scenario, ThetaSpec, sample_scenario, start_box


@dataclass(frozen=True)
class VerificationSetup:
    profile: PlatformProfile
    theta: ThetaSpec
    controller: ControllerConfig = ControllerConfig()
    safety: SafetyConfig = SafetyConfig()
    obstacles: ObstacleConfig = ObstacleConfig()
    horizon: int = 200
    batch_size: int = 1000

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrialDraw:
    index: int
    scenario: Scenario
    initial: np.ndarray  # (3,)
    disturbances: np.ndarray  # (J, 3)
    obstacle_increments: np.ndarray  # (J, M)


def draw_initial(scenario: Scenario, theta: ThetaSpec, rng: np.random.Generator) -> np.ndarray:
    x_lo, x_hi, y_lo, y_hi = start_box(scenario, theta.start_margin)
    return np.array([rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi), rng.uniform(0.0, 2.0 * math.pi)])


def draw_trial(setup: VerificationSetup, dset: DisturbanceSet, master_seed: int, stage: int, index: int) -> TrialDraw:
    rng = stream(master_seed, stage, index)
    sc = sample_scenario(setup.theta, rng, seed=index)
    x0 = draw_initial(sc, setup.theta, rng)
    dist = sample_disturbances(dset, rng, setup.horizon)
    m = setup.theta.n_moving
    inc = rng.uniform(-setup.obstacles.heading_noise, setup.obstacles.heading_noise, (setup.horizon, m))
    return TrialDraw(index, sc, x0, dist, inc)


class BatchEvaluator:
    """Online crash / progress bookkeeping for a batch (vectorized safety metric)."""

    def __init__(self, nav: NavigationBatch, safety: SafetyConfig) -> None:
        self.nav = nav
        self.cfg = safety
        n = nav.size
        self.progress = np.zeros(n, dtype=int)
        self.crashed = np.zeros(n, dtype=bool)
        self.crash_step = np.full(n, -1)
        self.capture2 = (safety.capture_fraction * nav.cell) ** 2
        self.hit2 = safety.collision_radius**2
        self.occ_pad = padded_occupancy(nav.occ)

    def static_crash(self, xy: np.ndarray) -> np.ndarray:
        nav = self.nav
        x = xy[:, 0]
        y = xy[:, 1]
        x0, y0 = nav.origin
        cs = nav.cell
        infl = self.cfg.inflation
        x1 = x0 + nav.cols * cs
        y1 = y0 + nav.rows * cs
        hit = np.zeros(nav.size, dtype=bool)
        if self.cfg.walls_crash:
            hit |= (x - x0 < infl) | (x1 - x < infl) | (y - y0 < infl) | (y1 - y < infl)
            hit |= ~((x0 <= x) & (x <= x1) & (y0 <= y) & (y <= y1))
        gx, gy, occ = neighbourhood_gaps(x, y, self.occ_pad, nav.origin, cs)
        hit |= np.any(occ & (gx * gx + gy * gy <= infl * infl), axis=1)
        return hit

    def update(self, j: int, pose: np.ndarray, obstacles: np.ndarray) -> None:
        alive = ~self.crashed
        xy = pose[:, :2]
        hit = self.static_crash(xy)
        if obstacles.shape[1]:
            dx = xy[:, 0, None] - obstacles[:, :, 0]
            dy = xy[:, 1, None] - obstacles[:, :, 1]
            hit |= np.any(dx * dx + dy * dy <= self.hit2, axis=1)
        new_crash = alive & hit
        self.crashed |= new_crash
        self.crash_step = np.where(new_crash, j, self.crash_step)
        alive = ~self.crashed

        nav = self.nav
        last = nav.path_len - 1
        nxt = np.minimum(self.progress + 1, last)
        tgt = nav.centers[nav.rows_idx, nxt]
        dx = xy[:, 0] - tgt[:, 0]
        dy = xy[:, 1] - tgt[:, 1]
        adv = alive & (self.progress < last) & (dx * dx + dy * dy <= self.capture2)
        self.progress = self.progress + adv

    @property
    def reached(self) -> np.ndarray:
        return (~self.crashed) & (self.progress == self.nav.path_len - 1)

    def values(self, horizon: int) -> List[SafetyValue]:
        out = []
        for b in range(self.nav.size):
            if self.crashed[b]:
                out.append(SafetyValue(-1.0, True, False, int(self.crash_step[b])))
            else:
                out.append(
                    SafetyValue(
                        float(self.progress[b] * self.nav.cell),
                        False,
                        bool(self.progress[b] == self.nav.path_len[b] - 1),
                        horizon,
                    )
                )
        return out


@dataclass
class BatchTraces:
    states: np.ndarray  # (B, J + 1, 3)
    inputs: np.ndarray  # (B, J, 2)
    obstacles: np.ndarray  # (B, J + 1, M, 2)


def simulate_uncertain_batch(
    setup: VerificationSetup, draws: Sequence[TrialDraw], record: bool = False
) -> Tuple[List[SafetyValue], Optional[BatchTraces]]:
    """Closed-loop rollouts of the uncertain model for a batch of trials, in lockstep."""
    prof = setup.profile
    dt = prof.dt_model
    J = setup.horizon
    scenarios = [d.scenario for d in draws]
    nav = NavigationBatch(scenarios, prof, setup.controller, setup.safety.walls_crash)
    ev = BatchEvaluator(nav, setup.safety)
    n = len(draws)
    m = setup.theta.n_moving
    pose = np.stack([d.initial for d in draws])
    dist = np.stack([d.disturbances for d in draws])  # (B, J, 3)
    inc = np.stack([d.obstacle_increments for d in draws])  # (B, J, M)
    if m:
        mo = np.array([sc.moving_obstacles for sc in scenarios], dtype=float)  # (B, M, 3)
        obs_xy = mo[:, :, :2].copy()
        obs_h = mo[:, :, 2].copy()
    else:
        obs_xy = np.zeros((n, 0, 2))
        obs_h = np.zeros((n, 0))
    bounds = nav.bounds
    traces = None
    if record:
        traces = BatchTraces(np.empty((n, J + 1, 3)), np.empty((n, J, 2)), np.empty((n, J + 1, m, 2)))
    two_pi = 2.0 * math.pi
    for j in range(J + 1):
        ev.update(j, pose, obs_xy)
        if record:
            traces.states[:, j] = pose
            traces.obstacles[:, j] = obs_xy
        if j == J:
            break
        v, w = nav.command(pose, obs_xy)
        if record:
            traces.inputs[:, j, 0] = v
            traces.inputs[:, j, 1] = w
        th = pose[:, 2]
        nxt = np.empty_like(pose)
        nxt[:, 0] = pose[:, 0] + dt * (np.cos(th) * v) + dist[:, j, 0]
        nxt[:, 1] = pose[:, 1] + dt * (np.sin(th) * v) + dist[:, j, 1]
        nxt[:, 2] = np.mod(th + dt * w + dist[:, j, 2], two_pi)
        pose = nxt
        if m:
            obs_xy, obs_h = step_obstacles(obs_xy, obs_h, inc[:, j], dt, bounds, setup.obstacles)
    return ev.values(J), traces


@dataclass
class TrialOutcome:
    index: int
    scenario: Scenario
    initial: Tuple[float, float, float]
    safety: SafetyValue
    trajectory: Optional[UncertainTrajectory] = None
    obstacle_trace: Optional[np.ndarray] = None  # (J + 1, M, 2)

    def to_record(self, master_seed: int, stage: int) -> dict:
        rec = {
            "index": self.index,
            "seed": [int(master_seed), int(stage), int(self.index)],
            "initial": list(self.initial),
            "safety": self.safety.to_dict(),
            "scenario": self.scenario.to_dict(),
        }
        if self.trajectory is not None:
            rec["trajectory"] = self.trajectory.to_record()
            rec["obstacles"] = self.obstacle_trace.tolist()
        return rec


def _verify_job(args) -> List[TrialOutcome]:
    setup, dset, master_seed, stage, indices, record = args
    draws = [draw_trial(setup, dset, master_seed, stage, i) for i in indices]
    values, tr = simulate_uncertain_batch(setup, draws, record)
    out = []
    for k, (d, s) in enumerate(zip(draws, values)):
        o = TrialOutcome(d.index, d.scenario, tuple(float(v) for v in d.initial), s)
        if record:
            o.trajectory = UncertainTrajectory(tr.states[k], tr.inputs[k], d.disturbances, d.index)
            o.obstacle_trace = tr.obstacles[k]
        out.append(o)
    return out


def run_trials(
    setup: VerificationSetup,
    dset: DisturbanceSet,
    n: int,
    master_seed: int,
    stage: int,
    workers: int = 1,
    record: bool = False,
) -> List[TrialOutcome]:
    jobs = [(setup, dset, master_seed, int(stage), r, record) for r in chunks(n, setup.batch_size)]
    out: List[TrialOutcome] = []
    for part in pmap(_verify_job, jobs, workers):
        out.extend(part)
    return out


def trial_trajectory(
    setup: VerificationSetup, dset: DisturbanceSet, master_seed: int, stage: int, index: int
) -> Tuple[UncertainTrajectory, np.ndarray, SafetyValue, Scenario]:
    """Re-simulate one trial and return its full trajectory and obstacle trace."""
    draw = draw_trial(setup, dset, master_seed, stage, index)
    values, tr = simulate_uncertain_batch(setup, [draw], record=True)
    traj = UncertainTrajectory(tr.states[0], tr.inputs[0], draw.disturbances, index)
    return traj, tr.obstacles[0], values[0], draw.scenario


@dataclass
class VerificationResult:
    min_safety: float
    certificate: Certificate
    samples: List[TrialOutcome] = field(default_factory=list)
    controller_id: str = ""
    master_seed: int = 0
    radius: float = 0.0

    @property
    def passed(self) -> bool:
        return self.min_safety >= 0.0

    @property
    def values(self) -> np.ndarray:
        return np.array([s.safety.value for s in self.samples])

    def to_dict(self) -> dict:
        vals = [s.safety.value for s in self.samples]
        return {
            "min_safety": self.min_safety,
            "passed": self.passed,
            "verdict": "pass" if self.passed else "fail",
            "certificate": self.certificate.to_dict(),
            "statement": verification_statement(self),
            "controller_id": self.controller_id,
            "master_seed": self.master_seed,
            "radius": self.radius,
            "crashes": int(sum(s.safety.crashed for s in self.samples)),
            "goals_reached": int(sum(s.safety.reached_goal for s in self.samples)),
            "values": vals,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VerificationResult":
        return cls(
            min_safety=float(d["min_safety"]),
            certificate=Certificate.from_dict(d["certificate"]),
            samples=[],
            controller_id=str(d.get("controller_id", "")),
            master_seed=int(d.get("master_seed", 0)),
            radius=float(d.get("radius", 0.0)),
        )


def verification_statement(result: VerificationResult) -> str:
    c = result.certificate
    return (
        f"s*_N = {result.min_safety:g} over N = {c.sample_count} trajectories: a fresh safety value "
        f"is at least s*_N with probability {c.statement()}"
    )


def verify_controller(
    setup: VerificationSetup,
    dset: DisturbanceSet,
    n: int,
    epsilon: float,
    master_seed: int,
    workers: int = 1,
    record: bool = False,
) -> VerificationResult:
    """Sample ``n`` trajectories of the uncertain model and certify their minimum safety value.

    With ``record`` each outcome keeps its full trajectory and obstacle trace.
    """
    if n < 1:
        raise ValueError("need at least one verification sample")
    outcomes = run_trials(setup, dset, n, master_seed, Stage.VERIFY, workers, record)
    s_star = min(o.safety.value for o in outcomes)
    cert = Certificate.issue(n, epsilon, 1)
    return VerificationResult(s_star, cert, outcomes, setup.controller.controller_id, master_seed, dset.radius)


@dataclass(frozen=True)
class SafetyValidation:
    n_fresh: int
    epsilon: float
    min_safety: float
    violation: float
    cutoff: float
    passed: bool
    controller_passed: bool

    @property
    def cutoff_ok(self) -> bool:
        return self.cutoff >= self.min_safety

    def to_dict(self) -> dict:
        return {
            "n_fresh": self.n_fresh,
            "epsilon": self.epsilon,
            "min_safety": self.min_safety,
            "violation": self.violation,
            "cutoff": self.cutoff,
            "cutoff_ok": self.cutoff_ok,
            "passed": self.passed,
            "controller_passed": self.controller_passed,
        }


def validate_verification(
    result: VerificationResult,
    setup: VerificationSetup,
    dset: DisturbanceSet,
    num_fresh: int,
    master_seed: int,
    workers: int = 1,
) -> Tuple[SafetyValidation, np.ndarray]:
    """Draw fresh safety values (disjoint streams) and check them against s*_N.

    Returns the report and the fresh values.
    """
    if num_fresh < 1:
        raise ValueError("need at least one fresh sample")
    fresh = run_trials(setup, dset, num_fresh, master_seed, Stage.VERIFY_FRESH, workers)
    vals = np.array([o.safety.value for o in fresh])
    dist = EmpiricalDistribution(vals, master_seed)
    eps = result.certificate.epsilon
    violation = empirical_violation(dist, result.min_safety, "below")
    cutoff = empirical_cutoff(dist, eps, "lower")
    report = SafetyValidation(len(vals), eps, result.min_safety, violation, cutoff, violation <= eps, result.passed)
    return report, vals


@dataclass
class DeployRun:
    index: int
    scenario: Scenario
    safety: SafetyValue
    states: np.ndarray  # (T + 1, 3) projected plant poses at model ticks
    obstacles: np.ndarray  # (T + 1, M, 2)

    @property
    def success(self) -> bool:
        return self.safety.reached_goal and not self.safety.crashed

    def to_record(self, master_seed: int) -> dict:
        return {
            "index": self.index,
            "seed": [int(master_seed), int(Stage.DEPLOY), int(self.index)],
            "success": self.success,
            "safety": self.safety.to_dict(),
            "scenario": self.scenario.to_dict(),
            "states": self.states.tolist(),
            "obstacles": self.obstacles.tolist(),
        }


def deploy_run(setup: VerificationSetup, master_seed: int, index: int, max_ticks: int) -> DeployRun:
    """Run the controller on the surrogate plant in one randomized scenario.

    One controller tick per model step; the plant advances
    ``steps_per_observation`` plant steps per tick.  Stops on crash, on
    reaching the goal, or after ``max_ticks`` ticks.
    """
    prof = setup.profile
    rng = stream(master_seed, Stage.DEPLOY, index)
    sc = sample_scenario(setup.theta, rng, seed=index)
    x0 = draw_initial(sc, setup.theta, rng)
    plant = embed_state(ModelState(*x0))
    nav = NavigationBatch([sc], prof, setup.controller, setup.safety.walls_crash)
    ev = BatchEvaluator(nav, setup.safety)
    m = setup.theta.n_moving
    if m:
        mo = np.array([sc.moving_obstacles], dtype=float)
        obs_xy = mo[:, :, :2].copy()
        obs_h = mo[:, :, 2].copy()
    else:
        obs_xy = np.zeros((1, 0, 2))
        obs_h = np.zeros((1, 0))
    states = []
    obs_trace = []
    noise = setup.obstacles.heading_noise
    tick = 0
    while True:
        pose = np.array([plant.pose.as_tuple()])
        states.append(pose[0])
        obs_trace.append(obs_xy[0].copy())
        ev.update(tick, pose, obs_xy)
        if ev.crashed[0] or ev.reached[0] or tick == max_ticks:
            break
        v, w = nav.command(pose, obs_xy)
        u = extend_input(ModelInput(float(v[0]), float(w[0])), plant, prof)
        plant = run_plant(plant, u, prof.steps_per_observation, prof, rng)
        if m:
            inc = rng.uniform(-noise, noise, (1, m))
            obs_xy, obs_h = step_obstacles(obs_xy, obs_h, inc, prof.dt_model, nav.bounds, setup.obstacles)
        tick += 1
    if ev.crashed[0]:
        sv = SafetyValue(-1.0, True, False, int(ev.crash_step[0]))
    else:
        sv = SafetyValue(float(ev.progress[0] * nav.cell), False, bool(ev.reached[0]), tick)
    return DeployRun(index, sc, sv, np.array(states), np.array(obs_trace).reshape(len(states), m, 2))


def _deploy_job(args) -> DeployRun:
    return deploy_run(*args)


@dataclass
class DeploymentReport:
    runs: List[DeployRun]
    verified: bool
    master_seed: int = 0

    @property
    def successes(self) -> int:
        return sum(r.success for r in self.runs)

    def to_dict(self) -> dict:
        return {
            "num_runs": len(self.runs),
            "successes": self.successes,
            "crashes": sum(r.safety.crashed for r in self.runs),
            "timeouts": sum((not r.safety.crashed) and not r.safety.reached_goal for r in self.runs),
            "verified": self.verified,
            "master_seed": self.master_seed,
            "runs": [
                {"index": r.index, "success": r.success, **r.safety.to_dict()} for r in self.runs
            ],
        }


def deploy_test(
    setup: VerificationSetup,
    num_runs: int,
    master_seed: int,
    max_ticks: int,
    verified: bool = True,
    workers: int = 1,
) -> DeploymentReport:
    jobs = [(setup, master_seed, i, max_ticks) for i in range(num_runs)]
    return DeploymentReport(pmap(_deploy_job, jobs, workers), verified, master_seed)
