"""Experiment configuration: one YAML document drives every command.

Unspecified fields fall back to per-profile defaults.  Every numeric field
is range-checked at load time so a bad file fails before any simulation.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import yaml

from .dynamics import Perturbation, PlatformProfile, get_profile
from .gap_estimator import TrackerGains
from .verification.controller import ControllerConfig
from .verification.harness import VerificationSetup
from .verification.metric import SafetyConfig
from .verification.obstacles import ObstacleConfig
from .verification.scenarios import THETA_SPECS, ThetaSpec


class ConfigError(ValueError):
    """The configuration document is malformed or out of range."""


def _prob(name: str, value: float) -> None:
    if not 0.0 < value < 1.0:
        raise ConfigError(f"{name} must lie strictly between 0 and 1, got {value}")


def _count(name: str, value: int) -> None:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")


@dataclass(frozen=True)
class GapSection:
    num_samples: int
    epsilon: float
    chains: int = 4
    k_rho: float = 0.8
    k_alpha: float = 1.5

    def check(self) -> None:
        _count("gap.num_samples", self.num_samples)
        _count("gap.chains", self.chains)
        _prob("gap.epsilon", self.epsilon)
        if self.k_rho <= 0 or self.k_alpha <= 0:
            raise ConfigError("gap tracker gains must be positive")

    @property
    def gains(self) -> TrackerGains:
        return TrackerGains(self.k_rho, self.k_alpha)


@dataclass(frozen=True)
class CoverageSection:
    num_samples: int

    def check(self) -> None:
        _count("coverage.num_samples", self.num_samples)


@dataclass(frozen=True)
class VerificationSection:
    num_samples: int = 300
    epsilon: float = 0.01
    horizon: int = 200
    batch_size: int = 1000

    def check(self) -> None:
        _count("verification.num_samples", self.num_samples)
        _count("verification.horizon", self.horizon)
        _count("verification.batch_size", self.batch_size)
        _prob("verification.epsilon", self.epsilon)


@dataclass(frozen=True)
class ValidationSection:
    gap_samples: int
    safety_samples: int = 20000
    bins: int = 30

    def check(self) -> None:
        _count("validation.gap_samples", self.gap_samples)
        _count("validation.safety_samples", self.safety_samples)
        _count("validation.bins", self.bins)


@dataclass(frozen=True)
class DeploySection:
    num_runs: int
    min_successes: int
    max_ticks: int

    def check(self) -> None:
        _count("deploy.num_runs", self.num_runs)
        _count("deploy.max_ticks", self.max_ticks)
        if not 0 <= self.min_successes <= self.num_runs:
            raise ConfigError("deploy.min_successes must lie in [0, num_runs]")


@dataclass(frozen=True)
class ExperimentConfig:
    profile: PlatformProfile
    theta: ThetaSpec
    gap: GapSection
    coverage: CoverageSection
    verification: VerificationSection
    controller: ControllerConfig
    safety: SafetyConfig
    obstacles: ObstacleConfig
    validation: ValidationSection
    deploy: DeploySection
    master_seed: int = 0
    output_dir: str = "results"

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, master_seed=int(seed))

    def setup(self) -> VerificationSetup:
        return VerificationSetup(
            self.profile,
            self.theta,
            self.controller,
            self.safety,
            self.obstacles,
            self.verification.horizon,
            self.verification.batch_size,
        )

    def to_dict(self) -> Dict[str, Any]:
        prof = dataclasses.asdict(self.profile)
        name = prof.pop("name")
        return {
            "profile": name,
            "master_seed": self.master_seed,
            "platform": prof,
            "theta": dataclasses.asdict(self.theta),
            "gap": dataclasses.asdict(self.gap),
            "coverage": dataclasses.asdict(self.coverage),
            "verification": dataclasses.asdict(self.verification),
            "controller": dataclasses.asdict(self.controller),
            "safety": dataclasses.asdict(self.safety),
            "obstacles": dataclasses.asdict(self.obstacles),
            "validation": dataclasses.asdict(self.validation),
            "deploy": dataclasses.asdict(self.deploy),
            "output": {"dir": self.output_dir},
        }

    @property
    def config_hash(self) -> str:
        """Digest of everything that can change a numerical result (not the seed or output path)."""
        d = self.to_dict()
        d.pop("output")
        d.pop("master_seed")
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_PROFILE_DEFAULTS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "robotarium": {
        "gap": {"num_samples": 600, "epsilon": 0.005},
        "coverage": {"num_samples": 1800},
        "validation": {"gap_samples": 1800},
        "deploy": {"num_runs": 40, "min_successes": 39, "max_ticks": 3000},
        "safety": {"inflation": 0.05, "walls_crash": True},
    },
    "quadruped": {
        "gap": {"num_samples": 100, "epsilon": 0.03},
        "coverage": {"num_samples": 300},
        "validation": {"gap_samples": 300},
        "deploy": {"num_runs": 10, "min_successes": 9, "max_ticks": 2000},
        "safety": {"inflation": 0.15, "walls_crash": True},
    },
}


def _build(cls, section: str, data: Mapping[str, Any], base: Optional[Mapping[str, Any]] = None):
    allowed = {f.name: f for f in fields(cls)}
    merged = dict(base or {})
    for key, value in (data or {}).items():
        if key not in allowed:
            raise ConfigError(f"unknown key {section}.{key}")
        merged[key] = value
    for key, value in merged.items():
        if isinstance(value, list):
            merged[key] = tuple(value)
        # YAML has no separate float syntax for whole numbers
        if allowed[key].type in ("float", float) and isinstance(value, int) and not isinstance(value, bool):
            merged[key] = float(value)
    try:
        return cls(**merged)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def _finite(obj: Any, where: str) -> None:
    if isinstance(obj, Mapping):
        for k, v in obj.items():
            _finite(v, f"{where}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _finite(v, f"{where}[{i}]")
    elif isinstance(obj, float) and not math.isfinite(obj):
        raise ConfigError(f"{where} must be finite")
    elif obj is not None and not isinstance(obj, (int, float, str, bool)):
        raise ConfigError(f"{where} has unsupported type {type(obj).__name__}")


_SECTIONS = (
    "profile", "master_seed", "platform", "theta", "gap", "coverage", "verification",
    "controller", "safety", "obstacles", "validation", "deploy", "output",
)


def config_from_dict(data: Mapping[str, Any]) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError("configuration must be a mapping")
    for key in data:
        if key not in _SECTIONS:
            raise ConfigError(f"unknown section {key!r}")
    _finite(dict(data), "config")
    name = data.get("profile", "robotarium")
    try:
        profile = get_profile(name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    defaults = _PROFILE_DEFAULTS[name]

    platform = dict(data.get("platform") or {})
    pert = platform.pop("perturbation", None)
    if pert is not None:
        if not isinstance(pert, Mapping):
            raise ConfigError("platform.perturbation must be a mapping")
        base_pert = dataclasses.asdict(profile.perturbation)
        platform["perturbation"] = _build(Perturbation, "platform.perturbation", pert, base_pert)
    base_prof = {f.name: getattr(profile, f.name) for f in fields(PlatformProfile)}
    if "name" in platform:
        raise ConfigError("platform.name is set by the profile key")
    profile = _build(PlatformProfile, "platform", platform, base_prof)

    base_theta = dataclasses.asdict(THETA_SPECS[name])
    theta = _build(ThetaSpec, "theta", data.get("theta"), base_theta)

    gap = _build(GapSection, "gap", data.get("gap"), defaults["gap"])
    coverage = _build(CoverageSection, "coverage", data.get("coverage"), defaults["coverage"])
    verification = _build(VerificationSection, "verification", data.get("verification"))
    controller = _build(ControllerConfig, "controller", data.get("controller"))
    safety = _build(SafetyConfig, "safety", data.get("safety"), defaults["safety"])
    obstacles = _build(ObstacleConfig, "obstacles", data.get("obstacles"))
    validation = _build(ValidationSection, "validation", data.get("validation"), defaults["validation"])
    deploy = _build(DeploySection, "deploy", data.get("deploy"), defaults["deploy"])
    for section in (gap, coverage, verification, validation, deploy):
        section.check()

    seed = data.get("master_seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"master_seed must be a nonnegative integer, got {seed!r}")
    output = data.get("output") or {}
    if not isinstance(output, Mapping) or set(output) - {"dir"}:
        raise ConfigError("output section accepts only 'dir'")
    return ExperimentConfig(
        profile=profile,
        theta=theta,
        gap=gap,
        coverage=coverage,
        verification=verification,
        controller=controller,
        safety=safety,
        obstacles=obstacles,
        validation=validation,
        deploy=deploy,
        master_seed=seed,
        output_dir=str(output.get("dir", "results")),
    )


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return config_from_dict(data)


def default_config(profile: str = "robotarium") -> ExperimentConfig:
    return config_from_dict({"profile": profile})


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(_plain(cfg.to_dict()), sort_keys=False)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
