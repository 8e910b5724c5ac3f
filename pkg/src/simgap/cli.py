"""Command-line entry point: ``simgap <verb> --config FILE [--seed N] [--out DIR] [--workers N]``.

Exit codes: 0 pass, 2 certificate or validation failure (or refusal),
3 configuration / input error, 4 simulation error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .config import ConfigError, ExperimentConfig, default_config, dump_config, load_config
from .gap_estimator import (
    ComparisonSample,
    GapResult,
    WaypointTimeout,
    _chain_job,
    chain_sizes,
    collect_samples,
    estimate_gap,
    gap_statement,
    validate_gap,
)
from .records import (
    RecordError,
    RecordWriter,
    read_records,
    read_result,
    write_histogram,
    write_records,
    write_result,
)
from .runtime import Stage, imap
from .uncertain_model import ControllerContractError, DisturbanceSet, coverage_test
from .verification.controller import KINDS
from .verification.harness import (
    VerificationResult,
    deploy_test,
    validate_verification,
    verification_statement,
    verify_controller,
)
from .verification.scenarios import ScenarioSamplingError

EXIT_PASS = 0
EXIT_FAIL = 2
EXIT_CONFIG = 3
EXIT_SIM = 4

GAP_RESULT = "gap_result.json"
GAP_LOG = "gap_samples.jsonl"
COVERAGE_REPORT = "coverage_report.json"
VERIFY_RESULT = "verification_result.json"
VERIFY_LOG = "verification_trajectories.jsonl"
GAP_VALIDATION = "gap_validation.json"
SAFETY_VALIDATION = "safety_validation.json"
GAP_HIST = "gap_histogram.csv"
SAFETY_HIST = "safety_histogram.csv"
DEPLOY_REPORT = "deployment_report.json"
DEPLOY_LOG = "deploy_trajectories.jsonl"


def _say(msg: str) -> None:
    print(msg, flush=True)


def _warn(msg: str) -> None:
    print(f"simgap: {msg}", file=sys.stderr, flush=True)


def _load_gap(path: Path, cfg: ExperimentConfig) -> GapResult:
    doc = read_result(path, "gap_result")
    if doc.get("config_hash") != cfg.config_hash:
        _warn(f"{path} was produced under a different configuration")
    try:
        return GapResult.from_dict(doc["result"])
    except (KeyError, TypeError, ValueError) as exc:
        raise RecordError(f"{path}: corrupt gap result ({exc})") from exc


def _load_verification(path: Path) -> VerificationResult:
    doc = read_result(path, "verification_result")
    try:
        return VerificationResult.from_dict(doc["result"])
    except (KeyError, TypeError, ValueError) as exc:
        raise RecordError(f"{path}: corrupt verification result ({exc})") from exc


def _dset(cfg: ExperimentConfig, radius: float) -> DisturbanceSet:
    return DisturbanceSet(radius, 3, tuple(cfg.profile.norm_weights))


# estimate-gap ---------------------------------------------------------------


def _resume_prefix(log: Path, cfg: ExperimentConfig) -> Dict[int, List[dict]]:
    """Samples of the chains a previous run finished, if its log matches this run."""
    try:
        head, recs = read_records(log, "gap_samples")
    except RecordError as exc:
        _warn(f"not resuming: {exc}")
        return {}
    if head.get("config_hash") != cfg.config_hash or head.get("master_seed") != cfg.master_seed:
        _warn("not resuming: existing log belongs to a different configuration or seed")
        return {}
    done: Dict[int, List[dict]] = {}
    pending: Dict[int, List[dict]] = {}
    for rec in recs:
        if rec.get("type") == "sample":
            pending.setdefault(int(rec["seed"][2]), []).append(rec)
        elif rec.get("type") == "chain_done":
            c = int(rec["chain"])
            done[c] = pending.pop(c, [])
    # keep only the leading run of finished chains, so the log stays in chain order
    kept: Dict[int, List[dict]] = {}
    c = 0
    while c in done:
        kept[c] = done[c]
        c += 1
    return kept


def cmd_estimate_gap(cfg: ExperimentConfig, out: Path, workers: int, resume: bool = False) -> int:
    prof = cfg.profile
    n = cfg.gap.num_samples
    seed = cfg.master_seed
    sizes = chain_sizes(n, cfg.gap.chains)
    starts = [sum(sizes[:c]) for c in range(len(sizes))]
    log = out / GAP_LOG
    kept = _resume_prefix(log, cfg) if resume and log.exists() else {}
    if kept:
        _say(f"resuming: {len(kept)} of {len(sizes)} chains already complete")

    samples: List[ComparisonSample] = []
    meta = dict(config_hash=cfg.config_hash, master_seed=seed, num_samples=n, chains=len(sizes))
    with RecordWriter(log, "gap_samples", **meta) as w:
        for c in sorted(kept):
            for rec in kept[c]:
                w.write(rec)
                samples.append(ComparisonSample.from_record(rec))
            w.write({"type": "chain_done", "chain": c, "count": len(kept[c])})
        w.flush()
        todo = [c for c in range(len(sizes)) if c not in kept]
        jobs = [(prof, sizes[c], seed, c, int(Stage.GAP), cfg.gap.gains, starts[c]) for c in todo]
        for c, part in zip(todo, imap(_chain_job, jobs, workers)):
            for s in part:
                w.write({"type": "sample", **s.to_record(seed)})
            w.write({"type": "chain_done", "chain": c, "count": len(part)})
            w.flush()
            samples.extend(part)

    samples.sort(key=lambda s: s.index)
    result = estimate_gap(samples, cfg.gap.epsilon, prof.name, seed)
    write_result(out / GAP_RESULT, "gap_result", result.to_dict(), cfg.config_hash, seed)
    _say(gap_statement(result))
    return EXIT_PASS


# coverage ---------------------------------------------------------------------


def cmd_coverage(
    cfg: ExperimentConfig, out: Path, workers: int, gap_path: Path, radius: Optional[float] = None
) -> int:
    gap = _load_gap(gap_path, cfg)
    r = gap.gap if radius is None else radius
    if r < 0:
        raise ConfigError("radius must be nonnegative")
    rep = coverage_test(
        cfg.profile,
        _dset(cfg, r),
        cfg.coverage.num_samples,
        cfg.master_seed,
        gap.certificate.epsilon,
        cfg.gap.chains,
        workers,
        cfg.gap.gains,
    )
    payload = rep.to_dict()
    payload["radius_overridden"] = radius is not None
    write_result(out / COVERAGE_REPORT, "coverage_report", payload, cfg.config_hash, cfg.master_seed)
    _say(
        f"coverage {rep.contained}/{rep.n_samples} = {rep.fraction:.4f} with radius {r:.6g} "
        f"(need >= {1 - rep.epsilon:.4f}): {'pass' if rep.passed else 'FAIL'}"
    )
    return EXIT_PASS if rep.passed else EXIT_FAIL


# verify -------------------------------------------------------------------------


def cmd_verify(cfg: ExperimentConfig, out: Path, workers: int, gap_path: Path) -> int:
    gap = _load_gap(gap_path, cfg)
    dset = _dset(cfg, gap.gap)
    res = verify_controller(
        cfg.setup(), dset, cfg.verification.num_samples, cfg.verification.epsilon, cfg.master_seed, workers, record=True
    )
    write_result(out / VERIFY_RESULT, "verification_result", res.to_dict(), cfg.config_hash, cfg.master_seed)
    write_records(
        out / VERIFY_LOG,
        "verification_trajectories",
        (o.to_record(cfg.master_seed, Stage.VERIFY) for o in res.samples),
        config_hash=cfg.config_hash,
        master_seed=cfg.master_seed,
    )
    _say(verification_statement(res))
    _say(f"verdict: {'pass' if res.passed else 'FAIL'} (controller {res.controller_id})")
    return EXIT_PASS if res.passed else EXIT_FAIL


# validate -------------------------------------------------------------------------


def cmd_validate(
    cfg: ExperimentConfig, out: Path, workers: int, gap_path: Path, verify_path: Optional[Path]
) -> int:
    have_gap = gap_path.exists()
    have_ver = verify_path is not None and verify_path.exists()
    if not have_gap:
        raise RecordError(f"missing gap result {gap_path}")
    gap = _load_gap(gap_path, cfg)
    ok = True

    fresh = collect_samples(
        cfg.profile, cfg.validation.gap_samples, cfg.master_seed, Stage.GAP_FRESH, cfg.gap.chains, workers, cfg.gap.gains
    )
    gv = validate_gap(gap, fresh)
    write_result(out / GAP_VALIDATION, "gap_validation", gv.to_dict(), cfg.config_hash, cfg.master_seed)
    write_histogram(out / GAP_HIST, [s.gap_value for s in fresh], cfg.validation.bins, gv.cutoff, gap.gap)
    _say(
        f"gap: {gv.n_fresh} fresh samples, {gv.violation:.4%} above r*_N = {gv.gap:.6g} "
        f"(allowed {gv.epsilon:.2%}), empirical cutoff {gv.cutoff:.6g}: {'pass' if gv.passed else 'FAIL'}"
    )
    ok &= gv.passed

    if verify_path is not None:
        if not have_ver:
            raise RecordError(f"missing verification result {verify_path}")
        res = _load_verification(verify_path)
        sv, vals = validate_verification(
            res, cfg.setup(), _dset(cfg, res.radius), cfg.validation.safety_samples, cfg.master_seed, workers
        )
        write_result(out / SAFETY_VALIDATION, "safety_validation", sv.to_dict(), cfg.config_hash, cfg.master_seed)
        write_histogram(out / SAFETY_HIST, vals, cfg.validation.bins, sv.cutoff, res.min_safety)
        _say(
            f"safety: {sv.n_fresh} fresh values, {sv.violation:.4%} below s*_N = {sv.min_safety:g} "
            f"(allowed {sv.epsilon:.2%}), lower cutoff {sv.cutoff:g}: {'pass' if sv.passed else 'FAIL'}"
        )
        if not sv.controller_passed:
            _say("safety: the verified controller itself failed (s*_N < 0)")
        ok &= sv.passed and sv.controller_passed
    return EXIT_PASS if ok else EXIT_FAIL


# deploy -------------------------------------------------------------------------


def cmd_deploy(cfg: ExperimentConfig, out: Path, workers: int, verify_path: Path, force: bool = False) -> int:
    res = _load_verification(verify_path)
    if not res.passed and not force:
        _warn(f"refusing to deploy: verification failed (s*_N = {res.min_safety:g}); pass --force to override")
        return EXIT_FAIL
    if not res.passed:
        _warn("deploying an unverified controller (--force)")
    rep = deploy_test(cfg.setup(), cfg.deploy.num_runs, cfg.master_seed, cfg.deploy.max_ticks, res.passed, workers)
    payload = rep.to_dict()
    payload["min_successes"] = cfg.deploy.min_successes
    write_result(out / DEPLOY_REPORT, "deployment_report", payload, cfg.config_hash, cfg.master_seed)
    write_records(
        out / DEPLOY_LOG,
        "deploy_trajectories",
        (r.to_record(cfg.master_seed) for r in rep.runs),
        config_hash=cfg.config_hash,
        master_seed=cfg.master_seed,
    )
    n = len(rep.runs)
    tag = "" if rep.verified else " [UNVERIFIED]"
    _say(f"deployment: {rep.successes}/{n} successes (need {cfg.deploy.min_successes}){tag}")
    return EXIT_PASS if rep.successes >= cfg.deploy.min_successes else EXIT_FAIL


# plumbing ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simgap", description="Sim2real gap certification and controller verification.")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--config", type=Path, help="YAML experiment config (default: built-in robotarium)")
        sp.add_argument("--seed", type=int, help="override master_seed")
        sp.add_argument("--out", type=Path, help="output directory (default: config output.dir)")
        sp.add_argument("--workers", type=int, default=1, help="worker processes (never changes results)")

    sp = sub.add_parser("estimate-gap", help="sample the sim2real gap and certify its maximum")
    common(sp)
    sp.add_argument("--resume", action="store_true", help="reuse finished chains from an existing sample log")

    sp = sub.add_parser("coverage", help="check one-step reachable-set coverage on fresh samples")
    common(sp)
    sp.add_argument("--gap-result", type=Path)
    sp.add_argument("--radius", type=float, help="override the certified radius")

    sp = sub.add_parser("verify", help="Monte Carlo verification against the uncertain model")
    common(sp)
    sp.add_argument("--gap-result", type=Path)
    sp.add_argument("--controller", choices=KINDS, help="override controller.kind")

    sp = sub.add_parser("validate", help="re-check both certificates on fresh samples")
    common(sp)
    sp.add_argument("--gap-result", type=Path)
    sp.add_argument("--verification-result", type=Path)
    sp.add_argument("--gap-only", action="store_true", help="skip the safety validation")

    sp = sub.add_parser("deploy", help="closed-loop runs on the surrogate plant")
    common(sp)
    sp.add_argument("--verification-result", type=Path)
    sp.add_argument("--force", action="store_true", help="deploy even if verification failed")

    sp = sub.add_parser("init-config", help="write the default configuration for a profile")
    sp.add_argument("--profile", default="robotarium")
    sp.add_argument("--out", type=Path, help="file to write (default: stdout)")
    return p


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        cfg = cfg.with_seed(args.seed)
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    if getattr(args, "controller", None):
        cfg = replace(cfg, controller=replace(cfg.controller, kind=args.controller))
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "init-config":
            text = dump_config(default_config(args.profile))
            if args.out:
                args.out.write_text(text)
            else:
                sys.stdout.write(text)
            return EXIT_PASS
        cfg = _resolve(args)
        out = args.out or Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        gap_path = getattr(args, "gap_result", None) or out / GAP_RESULT
        ver_path = getattr(args, "verification_result", None) or out / VERIFY_RESULT
        if args.verb == "estimate-gap":
            return cmd_estimate_gap(cfg, out, args.workers, args.resume)
        if args.verb == "coverage":
            return cmd_coverage(cfg, out, args.workers, gap_path, args.radius)
        if args.verb == "verify":
            return cmd_verify(cfg, out, args.workers, gap_path)
        if args.verb == "validate":
            return cmd_validate(cfg, out, args.workers, gap_path, None if args.gap_only else ver_path)
        if args.verb == "deploy":
            return cmd_deploy(cfg, out, args.workers, ver_path, args.force)
    except (ConfigError, RecordError) as exc:
        _warn(str(exc))
        return EXIT_CONFIG
    except (WaypointTimeout, ScenarioSamplingError, ControllerContractError) as exc:
        _warn(f"simulation error: {exc}")
        return EXIT_SIM
    raise AssertionError(f"unhandled verb {args.verb}")


if __name__ == "__main__":
    sys.exit(main())
