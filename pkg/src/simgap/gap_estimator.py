"""Sampling the comparison distribution and certifying the sim2real gap.

A comparison sample is produced by the waypoint protocol: drive the plant
to a uniformly drawn waypoint, hold a uniformly drawn model input for one
observation window, compare the projected plant pose with the nominal
prediction, then keep holding the input to decorrelate the next sample.

For a scalar decision variable the scenario program "smallest r that
dominates every sampled gap" is solved exactly by the sample maximum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .dynamics import (
    ModelInput,
    ModelState,
    PlantState,
    PlatformProfile,
    _box,
    _plant_advance,
    embed_state,
    nominal_step,
    observe_with_state,
    project_state,
    run_plant,
    wrap_angle,
    wrapped_state_distance,
)
from .runtime import Stage, pmap, stream
from .scenario_core import Certificate, EmpiricalDistribution, empirical_cutoff, empirical_violation


class WaypointTimeout(RuntimeError):
    """The regulation law did not bring the plant into the waypoint ball in budget."""


@dataclass(frozen=True)
class TrackerGains:
    k_rho: float = 0.8
    k_alpha: float = 1.5

    def __post_init__(self) -> None:
        if self.k_rho <= 0 or self.k_alpha <= 0:
            raise ValueError("tracker gains must be positive")


def polar_command(
    px: float,
    py: float,
    theta: float,
    tx: float,
    ty: float,
    gains: TrackerGains,
    profile: PlatformProfile,
) -> Tuple[float, float]:
    """Range-bearing regulation toward (tx, ty), saturated to the input box.

    The law drives forward or backward, whichever end of the body faces
    the target: v = k_rho * rho * cos(alpha), omega = k_alpha * beta where
    beta is the bearing folded into [-pi/2, pi/2].
    """
    dx = tx - px
    dy = ty - py
    rho = math.hypot(dx, dy)
    if rho == 0.0:
        return 0.0, 0.0
    alpha = wrap_angle(math.atan2(dy, dx) - theta)
    if alpha > 0.5 * math.pi:
        beta = alpha - math.pi
    elif alpha < -0.5 * math.pi:
        beta = alpha + math.pi
    else:
        beta = alpha
    v = gains.k_rho * rho * math.cos(alpha)
    w = gains.k_alpha * beta
    return profile.saturate(v, w)


def goto_waypoint(
    plant: PlantState,
    waypoint: Tuple[float, float],
    profile: PlatformProfile,
    rng: Optional[np.random.Generator],
    gains: TrackerGains = TrackerGains(),
    tolerance: Optional[float] = None,
    budget: Optional[int] = None,
) -> Tuple[PlantState, int]:
    """Regulate the plant into the ``tolerance`` ball around ``waypoint``.

    The command is recomputed once per model tick (every
    ``steps_per_observation`` plant steps); the ball is checked after every
    plant step.  Returns the plant state on arrival and the number of plant
    steps used.
    """
    tol = profile.waypoint_tolerance if tolerance is None else tolerance
    limit = profile.goto_budget if budget is None else budget
    wx, wy = float(waypoint[0]), float(waypoint[1])
    if not profile.in_state_box(wx, wy):
        raise ValueError(f"waypoint {waypoint} lies outside the state box of {profile.name}")

    pert = profile.perturbation
    noisy = pert.stochastic
    if noisy and rng is None:
        raise ValueError("a stochastic plant needs a random generator")
    box = _box(profile)
    dt = profile.dt_true
    k_tick = profile.steps_per_observation
    px, py, th = plant.pose.x, plant.pose.y, plant.pose.theta
    va, wa = plant.v_actual, plant.omega_actual
    bx, by = plant.slip
    tol2 = tol * tol
    steps = 0
    moved = False
    while True:
        if (px - wx) ** 2 + (py - wy) ** 2 <= tol2:
            break
        if steps >= limit:
            raise WaypointTimeout(
                f"{profile.name}: waypoint ({wx:.3f}, {wy:.3f}) not reached within {limit} plant steps"
            )
        vc, wc = polar_command(px, py, th, wx, wy, gains, profile)
        noise = rng.standard_normal((k_tick, 5)).tolist() if noisy else None
        for k in range(k_tick):
            px, py, th, va, wa, bx, by = _plant_advance(
                px, py, th, va, wa, bx, by, vc, wc, dt, pert, noise[k] if noisy else None, box
            )
            steps += 1
            moved = True
            if (px - wx) ** 2 + (py - wy) ** 2 <= tol2:
                break
    if not moved:
        return plant, 0
    return PlantState(ModelState(px, py, th), va, wa, (bx, by)), steps


@dataclass(frozen=True)
class ComparisonSample:
    initial_state: PlantState
    model_input: ModelInput
    observed: ModelState
    predicted: ModelState
    gap_value: float
    index: int = 0
    chain: int = 0
    stage: int = int(Stage.GAP)
    goto_steps: int = 0

    def recompute_gap(self, weights=(1.0, 1.0, 1.0)) -> float:
        return wrapped_state_distance(self.observed, self.predicted, weights)

    def to_record(self, master_seed: int) -> dict:
        p = self.initial_state
        return {
            "index": self.index,
            "seed": [int(master_seed), int(self.stage), int(self.chain)],
            "x0": list(p.pose.as_tuple()),
            "x0_memory": [p.v_actual, p.omega_actual, p.slip[0], p.slip[1]],
            "u": list(self.model_input.as_tuple()),
            "observed": list(self.observed.as_tuple()),
            "predicted": list(self.predicted.as_tuple()),
            "gap_value": self.gap_value,
            "goto_steps": self.goto_steps,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ComparisonSample":
        mem = rec.get("x0_memory", [0.0, 0.0, 0.0, 0.0])
        _, stage, chain = rec["seed"]
        return cls(
            initial_state=PlantState(ModelState(*rec["x0"]), mem[0], mem[1], (mem[2], mem[3])),
            model_input=ModelInput(*rec["u"]),
            observed=ModelState(*rec["observed"]),
            predicted=ModelState(*rec["predicted"]),
            gap_value=float(rec["gap_value"]),
            index=int(rec["index"]),
            chain=int(chain),
            stage=int(stage),
            goto_steps=int(rec.get("goto_steps", 0)),
        )


def draw_comparison_sample(
    profile: PlatformProfile,
    plant: PlantState,
    rng: np.random.Generator,
    gains: TrackerGains = TrackerGains(),
    index: int = 0,
    chain: int = 0,
    stage: int = int(Stage.GAP),
) -> Tuple[ComparisonSample, PlantState]:
    """Draw one (x0, u) pair from the comparison distribution and score it.

    Returns the sample and the plant state after the full mixing period,
    which seeds the next draw of the chain.
    """
    wx = rng.uniform(*profile.x_bounds)
    wy = rng.uniform(*profile.y_bounds)
    x0, steps = goto_waypoint(plant, (wx, wy), profile, rng, gains)

    u = ModelInput(rng.uniform(*profile.v_bounds), rng.uniform(*profile.omega_bounds))
    observed, after_obs = observe_with_state(x0, u, profile, rng)
    remaining = profile.mixing_steps - profile.steps_per_observation
    after_mix = run_plant(after_obs, u, remaining, profile, rng) if remaining > 0 else after_obs

    predicted = nominal_step(project_state(x0), u, profile.dt_model)
    gap = wrapped_state_distance(observed, predicted, profile.norm_weights)
    sample = ComparisonSample(
        initial_state=x0,
        model_input=u,
        observed=observed,
        predicted=predicted,
        gap_value=gap,
        index=index,
        chain=chain,
        stage=stage,
        goto_steps=steps,
    )
    return sample, after_mix


def chain_start(profile: PlatformProfile) -> PlantState:
    cx = 0.5 * (profile.x_bounds[0] + profile.x_bounds[1])
    cy = 0.5 * (profile.y_bounds[0] + profile.y_bounds[1])
    return embed_state(ModelState(cx, cy, 0.0))


def run_chain(
    profile: PlatformProfile,
    n: int,
    master_seed: int,
    chain: int,
    stage: int = int(Stage.GAP),
    gains: TrackerGains = TrackerGains(),
    first_index: int = 0,
) -> List[ComparisonSample]:
    """Draw ``n`` consecutive samples from one plant chain."""
    rng = stream(master_seed, stage, chain)
    plant = chain_start(profile)
    out = []
    for k in range(n):
        sample, plant = draw_comparison_sample(
            profile, plant, rng, gains, index=first_index + k, chain=chain, stage=stage
        )
        out.append(sample)
    return out


def chain_sizes(n: int, chains: int) -> List[int]:
    chains = max(1, min(chains, n))
    base, extra = divmod(n, chains)
    return [base + (1 if c < extra else 0) for c in range(chains)]


def _chain_job(args) -> List[ComparisonSample]:
    return run_chain(*args)


def collect_samples(
    profile: PlatformProfile,
    n: int,
    master_seed: int,
    stage: int = int(Stage.GAP),
    chains: int = 4,
    workers: int = 1,
    gains: TrackerGains = TrackerGains(),
) -> List[ComparisonSample]:
    """Draw ``n`` samples split over independent chains.

    The split depends on ``chains`` only; ``workers`` never changes the result.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    sizes = chain_sizes(n, chains)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int).tolist()
    jobs = [(profile, size, master_seed, c, int(stage), gains, starts[c]) for c, size in enumerate(sizes)]
    out: List[ComparisonSample] = []
    for part in pmap(_chain_job, jobs, workers):
        out.extend(part)
    return out


@dataclass
class GapResult:
    gap: float
    certificate: Certificate
    samples: List[ComparisonSample] = field(default_factory=list)
    profile_name: str = ""
    master_seed: int = 0

    def to_dict(self) -> dict:
        return {
            "gap": self.gap,
            "certificate": self.certificate.to_dict(),
            "statement": gap_statement(self),
            "profile": self.profile_name,
            "master_seed": self.master_seed,
            "sample_count": self.certificate.sample_count,
        }

    @classmethod
    def from_dict(cls, data: dict, samples: Optional[List[ComparisonSample]] = None) -> "GapResult":
        gap = float(data["gap"])
        if not gap >= 0.0:
            raise ValueError(f"certified gap must be nonnegative, got {gap}")
        return cls(
            gap=gap,
            certificate=Certificate.from_dict(data["certificate"]),
            samples=list(samples or []),
            profile_name=str(data.get("profile", "")),
            master_seed=int(data.get("master_seed", 0)),
        )


def gap_statement(result: GapResult) -> str:
    c = result.certificate
    return (
        f"sim2real gap r*_N = {result.gap:.6g} from N = {c.sample_count} samples: "
        f"a freshly sampled gap is at most r*_N with probability "
        f"{c.statement()} (1-(1-{c.epsilon:g})^{c.sample_count} = {c.confidence:.5f})"
    )


def estimate_gap(
    samples: Sequence[ComparisonSample],
    epsilon: float,
    profile_name: str = "",
    master_seed: int = 0,
) -> GapResult:
    """Solve the scalar scenario program: the certified gap is the largest sampled gap."""
    if len(samples) == 0:
        raise ValueError("estimate_gap needs at least one comparison sample")
    gap = max(s.gap_value for s in samples)
    cert = Certificate.issue(len(samples), epsilon, 1)
    return GapResult(gap, cert, list(samples), profile_name, master_seed)


@dataclass(frozen=True)
class GapValidation:
    n_fresh: int
    epsilon: float
    gap: float
    violation: float
    cutoff: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "n_fresh": self.n_fresh,
            "epsilon": self.epsilon,
            "gap": self.gap,
            "violation": self.violation,
            "cutoff": self.cutoff,
            "passed": self.passed,
        }


def _sample_keys(samples: Iterable[ComparisonSample]) -> set:
    return {(s.stage, s.chain) for s in samples}


def validate_gap(result: GapResult, fresh_samples: Sequence[ComparisonSample]) -> GapValidation:
    """Compare the certified gap with the empirical (1 - eps) cutoff of fresh gaps."""
    if len(fresh_samples) == 0:
        raise ValueError("validation needs at least one fresh sample")
    if result.samples and _sample_keys(result.samples) & _sample_keys(fresh_samples):
        raise ValueError("fresh samples share random streams with the training samples")
    eps = result.certificate.epsilon
    dist = EmpiricalDistribution.of((s.gap_value for s in fresh_samples))
    violation = empirical_violation(dist, result.gap, "above")
    cutoff = empirical_cutoff(dist, eps, "upper")
    return GapValidation(len(dist), eps, result.gap, violation, cutoff, violation <= eps)


def lag1_autocorrelation(values: Sequence[float]) -> float:
    x = np.asarray(values, dtype=float)
    if x.size < 3:
        raise ValueError("need at least three values")
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom == 0.0:
        return 0.0
    return float(np.dot(x[:-1], x[1:]) / denom)


def white_noise_band(n: int) -> float:
    """Half-width of the 95% band for lag-1 autocorrelation of white noise."""
    return 1.96 / math.sqrt(n)
