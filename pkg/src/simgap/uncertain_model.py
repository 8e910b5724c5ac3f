"""Uncertain model: nominal unicycle plus a uniform disturbance from the gap ball."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .dynamics import (
    ModelInput,
    ModelState,
    PlatformProfile,
    nominal_step,
    project_state,
    wrapped_state_distance,
)
from .gap_estimator import GapResult, TrackerGains, collect_samples
from .runtime import Stage
from .scenario_core import Certificate

_RADIUS_TOL = 1e-12


class ControllerContractError(RuntimeError):
    """A controller returned an input outside the model's input box."""


@dataclass(frozen=True)
class DisturbanceSet:
    """Closed ball {d : ||d||_w <= radius} in (x, y, theta) coordinates."""

    radius: float
    dim: int = 3
    weights: Tuple[float, ...] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        if not self.radius >= 0.0:
            raise ValueError(f"radius must be nonnegative, got {self.radius}")
        if len(self.weights) != self.dim:
            raise ValueError("one weight per disturbance coordinate")

    @classmethod
    def from_gap(cls, result: GapResult, weights: Tuple[float, float, float] = (1.0, 1.0, 1.0)) -> "DisturbanceSet":
        return cls(result.gap, 3, tuple(weights))

    def norm(self, d: Sequence[float]) -> float:
        return math.sqrt(sum(w * x * x for w, x in zip(self.weights, d)))

    def contains(self, d: Sequence[float]) -> bool:
        return self.norm(d) <= self.radius * (1.0 + _RADIUS_TOL) + _RADIUS_TOL


def sample_disturbances(dset: DisturbanceSet, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` i.i.d. points uniform in the ball, as an (n, dim) array.

    Direction: normalized Gaussian.  Radius: ``radius * U**(1/dim)``.
    Draws consume the stream as one normal block then one uniform block.
    """
    g = rng.standard_normal((n, dset.dim))
    u = rng.random(n)
    if dset.radius == 0.0:
        return np.zeros((n, dset.dim))
    norms = np.sqrt(np.sum(g * g, axis=1))
    norms[norms == 0.0] = 1.0
    r = dset.radius * u ** (1.0 / dset.dim)
    d = g * (r / norms)[:, None]
    scale = 1.0 / np.sqrt(np.asarray(dset.weights, dtype=float))
    return d * scale


def sample_disturbance(dset: DisturbanceSet, rng: np.random.Generator) -> np.ndarray:
    return sample_disturbances(dset, rng, 1)[0]


def uncertain_step(
    state: ModelState,
    u: ModelInput,
    disturbance: Sequence[float],
    dt_model: float,
    dset: Optional[DisturbanceSet] = None,
) -> ModelState:
    """Nominal step plus additive disturbance; heading renormalized, position unclamped."""
    if dset is not None and not dset.contains(disturbance):
        raise ValueError(f"disturbance {tuple(disturbance)} lies outside the ball of radius {dset.radius}")
    nxt = nominal_step(state, u, dt_model)
    return ModelState(nxt.x + disturbance[0], nxt.y + disturbance[1], nxt.theta + disturbance[2])


@dataclass
class UncertainTrajectory:
    states: np.ndarray  # (J + 1, 3)
    inputs: np.ndarray  # (J, 2)
    disturbances: np.ndarray  # (J, 3)
    seed: int = 0

    @property
    def horizon(self) -> int:
        return int(self.inputs.shape[0])

    def state(self, j: int) -> ModelState:
        return ModelState(*self.states[j])

    def to_record(self) -> dict:
        return {
            "seed": self.seed,
            "states": self.states.tolist(),
            "inputs": self.inputs.tolist(),
            "disturbances": self.disturbances.tolist(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "UncertainTrajectory":
        return cls(
            np.asarray(rec["states"], dtype=float).reshape(-1, 3),
            np.asarray(rec["inputs"], dtype=float).reshape(-1, 2),
            np.asarray(rec["disturbances"], dtype=float).reshape(-1, 3),
            int(rec.get("seed", 0)),
        )


Controller = Callable[[ModelState, int], ModelInput]


def rollout(
    initial: ModelState,
    controller: Controller,
    horizon: int,
    dset: DisturbanceSet,
    profile: PlatformProfile,
    rng: np.random.Generator,
    seed: int = 0,
    on_step: Optional[Callable[[int, ModelState], None]] = None,
) -> UncertainTrajectory:
    """Closed-loop rollout of the uncertain model for ``horizon`` steps.

    ``controller(state, j)`` is called once per step; ``on_step(j, state)``
    runs after each state update (e.g. to advance moving obstacles).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not profile.in_state_box(initial.x, initial.y):
        raise ValueError(f"initial state {initial} outside the state box of {profile.name}")
    dist = sample_disturbances(dset, rng, horizon)
    states = np.empty((horizon + 1, 3))
    inputs = np.empty((horizon, 2))
    states[0] = initial.as_tuple()
    state = initial
    for j in range(horizon):
        u = controller(state, j)
        if not profile.in_input_box(u):
            raise ControllerContractError(f"controller returned {u} at step {j}, outside the input box")
        state = uncertain_step(state, u, dist[j], profile.dt_model)
        inputs[j] = u.as_tuple()
        states[j + 1] = state.as_tuple()
        if on_step is not None:
            on_step(j, state)
    return UncertainTrajectory(states, inputs, dist, seed)


def replay(traj: UncertainTrajectory, dt_model: float) -> np.ndarray:
    """Recompute the state sequence from the stored initial state, inputs and disturbances."""
    out = np.empty_like(traj.states)
    out[0] = traj.states[0]
    state = ModelState(*traj.states[0])
    for j in range(traj.horizon):
        state = uncertain_step(state, ModelInput(*traj.inputs[j]), traj.disturbances[j], dt_model)
        out[j + 1] = state.as_tuple()
    return out


def reachable_contains(
    state: ModelState,
    u: ModelInput,
    point: ModelState,
    dset: DisturbanceSet,
    dt_model: float,
) -> bool:
    """Is ``point`` in the one-step reachable set nominal_step(state, u) + D?"""
    pred = nominal_step(state, u, dt_model)
    return wrapped_state_distance(point, pred, dset.weights) <= dset.radius


@dataclass(frozen=True)
class CoverageReport:
    n_samples: int
    radius: float
    contained: int
    fraction: float
    epsilon: float
    passed: bool
    max_gap: float

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "radius": self.radius,
            "contained": self.contained,
            "fraction": self.fraction,
            "epsilon": self.epsilon,
            "required_fraction": 1.0 - self.epsilon,
            "passed": self.passed,
            "max_fresh_gap": self.max_gap,
        }


def coverage_test(
    profile: PlatformProfile,
    dset: DisturbanceSet,
    num_samples: int,
    master_seed: int,
    epsilon: float,
    chains: int = 4,
    workers: int = 1,
    gains: TrackerGains = TrackerGains(),
    stage: int = int(Stage.COVERAGE),
) -> CoverageReport:
    """Fraction of fresh plant observations inside the uncertain model's one-step reachable set."""
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    samples = collect_samples(profile, num_samples, master_seed, stage, chains, workers, gains)
    inside = sum(
        reachable_contains(project_state(s.initial_state), s.model_input, s.observed, dset, profile.dt_model)
        for s in samples
    )
    frac = inside / num_samples
    return CoverageReport(
        num_samples,
        dset.radius,
        int(inside),
        frac,
        epsilon,
        frac >= 1.0 - epsilon,
        max(s.gap_value for s in samples),
    )


def certificate_radius(cert: Certificate, dset: DisturbanceSet) -> str:
    return (
        f"one-step reachable set with radius {dset.radius:.6g} contains the true evolution "
        f"with probability {cert.statement()}"
    )
