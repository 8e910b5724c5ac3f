import json

import pytest
import yaml

from simgap import cli
from simgap.records import read_records

SMALL = {
    "profile": "robotarium",
    "gap": {"num_samples": 600},
    "coverage": {"num_samples": 300},
    "verification": {"num_samples": 30},
    "validation": {"gap_samples": 600, "safety_samples": 300, "bins": 12},
    "deploy": {"num_runs": 2, "min_successes": 0, "max_ticks": 400},
}


def write_cfg(path, data=SMALL):
    path.write_text(yaml.safe_dump(data))
    return path


def run(*args):
    return cli.main([str(a) for a in args])


def strip_created(path):
    doc = json.loads(path.read_text())
    doc.pop("created", None)
    return doc


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_cfg(root / "small.yaml")
    out = root / "out"
    codes = {
        "estimate-gap": run("estimate-gap", "--config", cfg, "--out", out),
        "coverage": run("coverage", "--config", cfg, "--out", out),
        "verify": run("verify", "--config", cfg, "--out", out),
        "validate": run("validate", "--config", cfg, "--out", out),
        "deploy": run("deploy", "--config", cfg, "--out", out),
    }
    return cfg, out, codes


def test_pipeline_exit_codes(pipeline):
    _, out, codes = pipeline
    assert codes == dict.fromkeys(codes, cli.EXIT_PASS)
    for name in (cli.GAP_RESULT, cli.COVERAGE_REPORT, cli.VERIFY_RESULT, cli.GAP_VALIDATION,
                 cli.SAFETY_VALIDATION, cli.DEPLOY_REPORT):
        assert (out / name).exists(), name


def test_histograms_have_configured_bins(pipeline):
    _, out, _ = pipeline
    for name in (cli.GAP_HIST, cli.SAFETY_HIST):
        lines = (out / name).read_text().splitlines()
        assert len(lines) == 1 + 12 + 1
        assert lines[-1].startswith("cutoff|certified,")


def test_gap_log_has_all_samples(pipeline):
    _, out, _ = pipeline
    head, recs = read_records(out / cli.GAP_LOG, "gap_samples")
    assert sum(r["type"] == "sample" for r in recs) == 600
    assert head["num_samples"] == 600


def test_tampered_gap_fails_validation(pipeline, tmp_path):
    cfg, out, _ = pipeline
    doc = json.loads((out / cli.GAP_RESULT).read_text())
    doc["result"]["gap"] /= 2
    bad = tmp_path / "gap.json"
    bad.write_text(json.dumps(doc))
    assert run("validate", "--config", cfg, "--out", tmp_path, "--gap-result", bad, "--gap-only") == cli.EXIT_FAIL


def test_deploy_refuses_failed_verification(pipeline, tmp_path):
    cfg, _, _ = pipeline
    out = tmp_path / "o"
    assert run("estimate-gap", "--config", cfg, "--out", out) == 0
    assert run("verify", "--config", cfg, "--out", out, "--controller", "straight") == cli.EXIT_FAIL
    assert run("deploy", "--config", cfg, "--out", out) == cli.EXIT_FAIL
    assert not (out / cli.DEPLOY_REPORT).exists()
    run("deploy", "--config", cfg, "--out", out, "--force")
    rep = json.loads((out / cli.DEPLOY_REPORT).read_text())["result"]
    assert rep["verified"] is False


def test_resume_reproduces_log(pipeline, tmp_path):
    cfg, out, _ = pipeline
    lines = (out / cli.GAP_LOG).read_text().splitlines(keepends=True)
    # cut the log in the middle of the second chain, with a torn final line
    done = [i for i, l in enumerate(lines) if '"chain_done"' in l]
    cut = lines[: done[0] + 1 + 5]
    cut.append(lines[done[0] + 6][:20])
    tmp_out = tmp_path / "r"
    tmp_out.mkdir()
    (tmp_out / cli.GAP_LOG).write_text("".join(cut))
    assert run("estimate-gap", "--config", cfg, "--out", tmp_out, "--resume") == 0
    assert (tmp_out / cli.GAP_LOG).read_text() == (out / cli.GAP_LOG).read_text()
    assert strip_created(tmp_out / cli.GAP_RESULT) == strip_created(out / cli.GAP_RESULT)


def test_resume_ignores_foreign_log(pipeline, tmp_path):
    cfg, out, _ = pipeline
    tmp_out = tmp_path / "r"
    tmp_out.mkdir()
    (tmp_out / cli.GAP_LOG).write_text((out / cli.GAP_LOG).read_text())
    assert run("estimate-gap", "--config", cfg, "--out", tmp_out, "--resume", "--seed", 5) == 0
    head, _ = read_records(tmp_out / cli.GAP_LOG)
    assert head["master_seed"] == 5


def test_missing_inputs_are_config_errors(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml")
    assert run("verify", "--config", cfg, "--out", tmp_path / "o") == cli.EXIT_CONFIG
    assert run("deploy", "--config", cfg, "--out", tmp_path / "o") == cli.EXIT_CONFIG
    assert run("validate", "--config", cfg, "--out", tmp_path / "o") == cli.EXIT_CONFIG
    assert run("estimate-gap", "--config", tmp_path / "absent.yaml", "--out", tmp_path) == cli.EXIT_CONFIG


@pytest.mark.parametrize("eps", [0, 1, -0.1, 2])
def test_bad_epsilon(tmp_path, eps):
    cfg = write_cfg(tmp_path / "c.yaml", {**SMALL, "gap": {"num_samples": 10, "epsilon": eps}})
    assert run("estimate-gap", "--config", cfg, "--out", tmp_path) == cli.EXIT_CONFIG


def test_bad_workers_and_seed(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml")
    assert run("estimate-gap", "--config", cfg, "--out", tmp_path, "--workers", 0) == cli.EXIT_CONFIG
    assert run("estimate-gap", "--config", cfg, "--out", tmp_path, "--seed", -3) == cli.EXIT_CONFIG


def test_single_sample_run(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", {**SMALL, "gap": {"num_samples": 1, "chains": 1}})
    assert run("estimate-gap", "--config", cfg, "--out", tmp_path) == 0
    res = json.loads((tmp_path / cli.GAP_RESULT).read_text())["result"]
    assert res["certificate"]["sample_count"] == 1
    assert res["certificate"]["confidence"] == pytest.approx(0.005)


def test_simulation_error_code(tmp_path, capsys):
    cfg = write_cfg(
        tmp_path / "c.yaml",
        {**SMALL, "theta": {"rows": 3, "cols": 3, "n_obstacles": 8, "n_goals": 1, "n_moving": 0}},
    )
    assert run("estimate-gap", "--config", cfg, "--out", tmp_path) == 0
    assert run("verify", "--config", cfg, "--out", tmp_path) == cli.EXIT_SIM
    assert "simulation error" in capsys.readouterr().err


def test_init_config(tmp_path):
    p = tmp_path / "q.yaml"
    assert run("init-config", "--profile", "quadruped", "--out", p) == 0
    assert yaml.safe_load(p.read_text())["profile"] == "quadruped"


def test_outputs_independent_of_workers(tmp_path):
    data = {**SMALL, "gap": {"num_samples": 200}, "coverage": {"num_samples": 100},
            "validation": {"gap_samples": 200, "safety_samples": 100}}
    cfg = write_cfg(tmp_path / "c.yaml", data)
    outs = {}
    for w in (1, 8):
        out = tmp_path / f"w{w}"
        for verb in ("estimate-gap", "coverage", "verify", "validate", "deploy"):
            run(verb, "--config", cfg, "--out", out, "--workers", w)
        outs[w] = out
    names = sorted(p.name for p in outs[1].iterdir())
    assert names == sorted(p.name for p in outs[8].iterdir())
    for name in names:
        a, b = outs[1] / name, outs[8] / name
        if name.endswith(".json"):
            assert strip_created(a) == strip_created(b), name
        else:
            assert a.read_bytes() == b.read_bytes(), name
