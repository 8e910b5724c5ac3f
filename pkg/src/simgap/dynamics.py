"""Unicycle model, surrogate true plants and the maps between them.

The nominal model is the forward-Euler unicycle.  The "true" system is a
surrogate plant integrated at its own (finer) time step with first-order
actuator lag, multiplicative gain error, additive pose noise and a slowly
drifting slip velocity.  With every perturbation scale at zero the plant
reduces to the nominal model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

TWO_PI = 2.0 * math.pi
_BOX_TOL = 1e-12


def normalize_heading(theta: float) -> float:
    """Map an angle into [0, 2*pi)."""
    t = math.fmod(theta, TWO_PI)
    if t < 0.0:
        t += TWO_PI
    if t >= TWO_PI:  # fmod of values a hair below a multiple of 2*pi
        t = 0.0
    return t


def wrap_angle(delta: float) -> float:
    """Map an angle difference into (-pi, pi]."""
    w = math.fmod(delta + math.pi, TWO_PI)
    if w <= 0.0:
        w += TWO_PI
    return w - math.pi


@dataclass(frozen=True, slots=True)
class ModelState:
    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", normalize_heading(float(self.theta)))

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.x, self.y, self.theta)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True, slots=True)
class ModelInput:
    v: float
    omega: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "v", float(self.v))
        object.__setattr__(self, "omega", float(self.omega))

    def as_tuple(self) -> Tuple[float, float]:
        return (self.v, self.omega)


@dataclass(frozen=True)
class Perturbation:
    """Surrogate plant imperfections.

    Noise scales are per square-root second so the gap over one model step
    does not depend on how finely the plant is integrated.
    """

    lag_time: float = 0.0  # s, actuator first-order lag
    gain_v: float = 0.0  # relative forward-speed gain error
    gain_omega: float = 0.0  # relative yaw-rate gain error
    noise_pos: float = 0.0  # m / sqrt(s)
    noise_theta: float = 0.0  # rad / sqrt(s)
    slip_scale: float = 0.0  # m/s, stationary std of the slip velocity
    slip_time: float = 1.0  # s, slip correlation time

    def __post_init__(self) -> None:
        for name in ("lag_time", "noise_pos", "noise_theta", "slip_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.slip_time <= 0:
            raise ValueError("slip_time must be positive")

    @property
    def is_zero(self) -> bool:
        return (
            self.lag_time == 0.0
            and self.gain_v == 0.0
            and self.gain_omega == 0.0
            and self.noise_pos == 0.0
            and self.noise_theta == 0.0
            and self.slip_scale == 0.0
        )

    @property
    def stochastic(self) -> bool:
        return self.noise_pos > 0.0 or self.noise_theta > 0.0 or self.slip_scale > 0.0


@dataclass(frozen=True)
class PlatformProfile:
    name: str
    x_bounds: Tuple[float, float]
    y_bounds: Tuple[float, float]
    v_bounds: Tuple[float, float]
    omega_bounds: Tuple[float, float]
    dt_true: float
    dt_model: float
    steps_per_observation: int
    mixing_steps: int
    perturbation: Perturbation = field(default_factory=Perturbation)
    waypoint_tolerance: float = 0.1
    goto_budget: int = 10_000
    norm_weights: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        for lo, hi, what in (
            (*self.x_bounds, "x_bounds"),
            (*self.y_bounds, "y_bounds"),
            (*self.v_bounds, "v_bounds"),
            (*self.omega_bounds, "omega_bounds"),
        ):
            if not lo < hi:
                raise ValueError(f"{what} must be a nonempty interval, got ({lo}, {hi})")
        if self.dt_true <= 0 or self.dt_model <= 0:
            raise ValueError("time steps must be positive")
        if self.steps_per_observation < 1 or self.mixing_steps < self.steps_per_observation:
            raise ValueError("need 1 <= steps_per_observation <= mixing_steps")
        if self.goto_budget < 1:
            raise ValueError("goto_budget must be >= 1")
        if any(w <= 0 for w in self.norm_weights) or len(self.norm_weights) != 3:
            raise ValueError("norm_weights must be three positive numbers")

    @property
    def obs_time(self) -> float:
        return self.steps_per_observation * self.dt_true

    def in_state_box(self, x: float, y: float) -> bool:
        return (
            self.x_bounds[0] - _BOX_TOL <= x <= self.x_bounds[1] + _BOX_TOL
            and self.y_bounds[0] - _BOX_TOL <= y <= self.y_bounds[1] + _BOX_TOL
        )

    def in_input_box(self, u: ModelInput) -> bool:
        return (
            self.v_bounds[0] - _BOX_TOL <= u.v <= self.v_bounds[1] + _BOX_TOL
            and self.omega_bounds[0] - _BOX_TOL <= u.omega <= self.omega_bounds[1] + _BOX_TOL
        )

    def saturate(self, v: float, omega: float) -> Tuple[float, float]:
        v = min(max(v, self.v_bounds[0]), self.v_bounds[1])
        omega = min(max(omega, self.omega_bounds[0]), self.omega_bounds[1])
        return v, omega

    def with_perturbation(self, perturbation: Perturbation) -> "PlatformProfile":
        return replace(self, perturbation=perturbation)


ROBOTARIUM = PlatformProfile(
    name="robotarium",
    x_bounds=(-1.6, 1.6),
    y_bounds=(-1.0, 1.0),
    v_bounds=(-0.2, 0.2),
    omega_bounds=(-math.pi, math.pi),
    dt_true=0.033,
    dt_model=0.033,
    steps_per_observation=1,
    mixing_steps=50,
    perturbation=Perturbation(
        lag_time=0.004,
        gain_v=0.03,
        gain_omega=-0.02,
        noise_pos=0.004,
        noise_theta=0.008,
        slip_scale=0.004,
        slip_time=1.5,
    ),
    goto_budget=10_000,
)

QUADRUPED = PlatformProfile(
    name="quadruped",
    x_bounds=(-2.5, 2.5),
    y_bounds=(-2.5, 2.5),
    v_bounds=(-0.15, 0.15),
    omega_bounds=(-0.3, 0.3),
    dt_true=0.001,
    dt_model=0.1,
    steps_per_observation=100,
    mixing_steps=1000,
    perturbation=Perturbation(
        lag_time=0.02,
        gain_v=-0.04,
        gain_omega=0.03,
        noise_pos=0.005,
        noise_theta=0.01,
        slip_scale=0.005,
        slip_time=2.0,
    ),
    goto_budget=200_000,
)

PROFILES = {p.name: p for p in (ROBOTARIUM, QUADRUPED)}


def get_profile(name: str) -> PlatformProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown platform profile {name!r}; choose from {sorted(PROFILES)}") from None


@dataclass(frozen=True, slots=True)
class PlantState:
    """True-system state: the pose plus the surrogate's hidden memory."""

    pose: ModelState
    v_actual: float = 0.0
    omega_actual: float = 0.0
    slip: Tuple[float, float] = (0.0, 0.0)


def nominal_step(state: ModelState, u: ModelInput, dt_model: float) -> ModelState:
    """One forward-Euler step of the unicycle."""
    th = state.theta
    return ModelState(
        state.x + dt_model * (math.cos(th) * u.v),
        state.y + dt_model * (math.sin(th) * u.v),
        th + dt_model * u.omega,
    )


def clamp_to_box(state: ModelState, profile: PlatformProfile) -> Tuple[ModelState, bool]:
    """Clamp the planar position into the profile's state box; report whether it moved."""
    x = min(max(state.x, profile.x_bounds[0]), profile.x_bounds[1])
    y = min(max(state.y, profile.y_bounds[0]), profile.y_bounds[1])
    if x == state.x and y == state.y:
        return state, False
    return ModelState(x, y, state.theta), True


def nominal_step_in_box(
    state: ModelState, u: ModelInput, profile: PlatformProfile
) -> Tuple[ModelState, bool]:
    return clamp_to_box(nominal_step(state, u, profile.dt_model), profile)


def project_state(state: PlantState) -> ModelState:
    return state.pose


def embed_state(state: ModelState) -> PlantState:
    return PlantState(pose=state)


def extend_input(model_input: ModelInput, state: PlantState, profile: PlatformProfile) -> ModelInput:
    """Map a model command onto the true system's input.

    Both surrogates take (v, omega) directly: on the Robotarium it is the
    identity, on the quadruped it is the reference handed to the low-level
    lag tracker that stands in for the walking controller.
    """
    if not profile.in_input_box(model_input):
        raise ValueError(f"model input {model_input} outside the input box of {profile.name}")
    return model_input


def _plant_advance(
    px: float,
    py: float,
    th: float,
    va: float,
    wa: float,
    bx: float,
    by: float,
    vc: float,
    wc: float,
    dt: float,
    pert: Perturbation,
    z: Optional[Tuple[float, ...]],
    box: Tuple[float, float, float, float],
):
    """Single surrogate-plant update on raw floats.  ``z`` holds five standard
    normals (pos x, pos y, heading, slip x, slip y) or None when noise-free."""
    if pert.lag_time > 0.0:
        a = -math.expm1(-dt / pert.lag_time)
        va = va + a * (vc - va)
        wa = wa + a * (wc - wa)
    else:
        va, wa = vc, wc
    ve = (1.0 + pert.gain_v) * va
    we = (1.0 + pert.gain_omega) * wa
    if z is not None:
        if pert.slip_scale > 0.0:
            decay = dt / pert.slip_time
            kick = pert.slip_scale * math.sqrt(2.0 * decay)
            bx = bx - decay * bx + kick * z[3]
            by = by - decay * by + kick * z[4]
        sq = math.sqrt(dt)
        nx = pert.noise_pos * sq * z[0]
        ny = pert.noise_pos * sq * z[1]
        nt = pert.noise_theta * sq * z[2]
    else:
        nx = ny = nt = 0.0
    c = math.cos(th)
    s = math.sin(th)
    px = px + dt * (c * ve + bx) + nx
    py = py + dt * (s * ve + by) + ny
    th = th + dt * we + nt
    if px < box[0]:
        px = box[0]
    elif px > box[1]:
        px = box[1]
    if py < box[2]:
        py = box[2]
    elif py > box[3]:
        py = box[3]
    return px, py, th, va, wa, bx, by


def _box(profile: PlatformProfile) -> Tuple[float, float, float, float]:
    return (profile.x_bounds[0], profile.x_bounds[1], profile.y_bounds[0], profile.y_bounds[1])


def plant_step(
    state: PlantState,
    u: ModelInput,
    profile: PlatformProfile,
    rng: Optional[np.random.Generator] = None,
) -> PlantState:
    """Advance the surrogate plant by one ``profile.dt_true`` step under true input ``u``."""
    return run_plant(state, u, 1, profile, rng)


def run_plant(
    state: PlantState,
    u: ModelInput,
    n_steps: int,
    profile: PlatformProfile,
    rng: Optional[np.random.Generator] = None,
) -> PlantState:
    """Hold the true input ``u`` for ``n_steps`` plant steps.

    Equivalent to calling :func:`plant_step` ``n_steps`` times: the noise is
    drawn as one (n_steps, 5) block, which consumes the stream in the same
    order as n single draws.
    """
    pert = profile.perturbation
    vc, wc = profile.saturate(u.v, u.omega)
    if pert.stochastic:
        if rng is None:
            raise ValueError("a stochastic plant needs a random generator")
        noise = rng.standard_normal((n_steps, 5)).tolist()
    else:
        noise = None
    px, py, th = state.pose.x, state.pose.y, state.pose.theta
    va, wa = state.v_actual, state.omega_actual
    bx, by = state.slip
    dt = profile.dt_true
    box = _box(profile)
    for k in range(n_steps):
        px, py, th, va, wa, bx, by = _plant_advance(
            px, py, th, va, wa, bx, by, vc, wc, dt, pert, noise[k] if noise is not None else None, box
        )
    return PlantState(ModelState(px, py, th), va, wa, (bx, by))


def observe_with_state(
    initial: PlantState,
    model_input: ModelInput,
    profile: PlatformProfile,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[ModelState, PlantState]:
    """Run the observation window and return (projected pose, plant state)."""
    u = extend_input(model_input, initial, profile)
    final = run_plant(initial, u, profile.steps_per_observation, profile, rng)
    return project_state(final), final


def observe(
    initial: PlantState,
    model_input: ModelInput,
    profile: PlatformProfile,
    rng: Optional[np.random.Generator] = None,
) -> ModelState:
    """O(x0, u): projected plant pose after ``steps_per_observation`` plant steps."""
    return observe_with_state(initial, model_input, profile, rng)[0]


def wrapped_state_distance(
    a: ModelState, b: ModelState, weights: Tuple[float, float, float] = (1.0, 1.0, 1.0)
) -> float:
    """Weighted Euclidean distance on (x, y, theta) with the heading difference wrapped."""
    dx = a.x - b.x
    dy = a.y - b.y
    dth = wrap_angle(a.theta - b.theta)
    return math.sqrt(weights[0] * dx * dx + weights[1] * dy * dy + weights[2] * dth * dth)
