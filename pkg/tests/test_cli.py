import json
import subprocess
import sys

import numpy as np
import pytest

from radiant.cli import EXIT_IO, EXIT_OK, EXIT_PROPERTY, EXIT_USAGE, ExperimentPlan, UsageError, main
from radiant.io import read_pfm

SMALL_PLAN = {
    "noise_sigmas_deg": [0.0, 2.0],
    "models": ["slanted"],
    "losses": [{"loss": "reparam"}, {"loss": "combined", "mu": [1.0]}],
    "seeds": [1],
    "reflectance_noise_frac": 0.01,
    "resolution": 24,
    "sweep": {"coarse_samples": 32, "patch_radius": 1},
}


def run_cli(*args, threads=None):
    cmd = [sys.executable, "-m", "radiant.cli"]
    if threads is not None:
        cmd += ["--threads", str(threads)]
    return subprocess.run(cmd + [str(a) for a in args], capture_output=True, text=True)


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def small_bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    assert main(["synth", "--out", str(out), "--resolution", "32"]) == EXIT_OK
    return out


def test_synth_writes_benchmark(small_bench):
    doc = json.loads((small_bench / "benchmark.json").read_text())
    assert doc["version"] == "1"
    assert (small_bench / "normals_04.pfm").is_file()
    assert read_pfm(small_bench / "mask_00.pfm").data.shape == (32, 32)


def test_synth_rejects_single_view(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "b"), "--views", "1"]) == EXIT_USAGE


def test_synth_bad_config_file(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "b"), "--config", str(tmp_path / "missing.json")]) == EXIT_IO


def test_reconstruct_and_evaluate(small_bench, tmp_path):
    rec = tmp_path / "rec"
    code = main([
        "reconstruct", str(small_bench), "--out", str(rec),
        "--model", "slanted", "--patch-radius", "1", "--coarse-samples", "32",
    ])
    assert code == EXIT_OK
    summary = json.loads((rec / "summary.json").read_text())
    assert summary["valid_frac"] > 0.5
    assert summary["mean_depth_err"] < 0.05 * summary["mean_gt_depth"]
    for name in ("depth.pfm", "cost.pfm", "valid.pfm", "points.ply"):
        assert (rec / name).is_file()
    assert main(["evaluate", str(rec), str(small_bench), "--out", str(tmp_path / "e.json")]) == EXIT_OK
    report = json.loads((tmp_path / "e.json").read_text())
    assert report["chamfer"]["mean"] < 0.05


def test_reconstruct_usage_errors(small_bench, tmp_path):
    assert main(["reconstruct", str(small_bench), "--out", str(tmp_path), "--loss", "combined"]) == EXIT_USAGE
    assert main(["reconstruct", str(small_bench), "--out", str(tmp_path), "--ref", "9"]) == EXIT_USAGE
    assert main(["reconstruct", str(small_bench), "--out", str(tmp_path), "--zrange", "3", "2"]) == EXIT_USAGE
    assert main(["reconstruct", str(tmp_path / "nowhere"), "--out", str(tmp_path)]) == EXIT_IO


def test_reconstruct_degraded(small_bench, tmp_path):
    # a depth range far in front of the surface leaves almost nothing valid
    code = main([
        "reconstruct", str(small_bench), "--out", str(tmp_path / "r"),
        "--zrange", "0.1", "0.2", "--patch-radius", "0", "--coarse-samples", "16",
        "--min-valid-views", "4",
    ])
    assert code == 4


def test_reparam_check_exit_codes():
    assert main(["reparam-check", "--trials", "200"]) == EXIT_OK
    assert main(["reparam-check", "--trials", "10", "--inject-singular"]) == EXIT_PROPERTY
    assert main(["reparam-check", "--trials", "0"]) == EXIT_USAGE


def test_plan_validation():
    with pytest.raises(UsageError):
        ExperimentPlan.from_dict({**SMALL_PLAN, "noise_sigmas_deg": []})
    with pytest.raises(UsageError):
        ExperimentPlan.from_dict({**SMALL_PLAN, "losses": [{"loss": "combined"}]})
    with pytest.raises(UsageError):
        ExperimentPlan.from_dict({**SMALL_PLAN, "models": ["cubic"]})
    plan = ExperimentPlan.from_dict(SMALL_PLAN)
    assert plan.losses == [("reparam", None), ("combined", 1.0)]


def test_noise_sweep_empty_grid(tmp_path):
    (tmp_path / "plan.json").write_text(json.dumps({**SMALL_PLAN, "noise_sigmas_deg": []}))
    assert main(["noise-sweep", str(tmp_path / "plan.json"), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_noise_sweep_results(tmp_path):
    (tmp_path / "plan.json").write_text(json.dumps(SMALL_PLAN))
    assert main(["noise-sweep", str(tmp_path / "plan.json"), "--out", str(tmp_path / "o")]) == EXIT_OK
    lines = (tmp_path / "o" / "results.csv").read_text().splitlines()
    assert lines[0].startswith("experiment_id,seed,noise_sigma_deg")
    assert len(lines) == 1 + 2 * 2
    assert all(line.endswith(",") for line in lines[1:])  # empty error column


@pytest.mark.slow
def test_outputs_identical_across_runs_and_threads(tmp_path):
    (tmp_path / "plan.json").write_text(json.dumps(SMALL_PLAN))
    trees = []
    for k, threads in enumerate((1, 8, 8)):
        out = tmp_path / f"run{k}"
        r = run_cli("synth", "--out", out / "bench", "--resolution", "24", "--normal-noise", "2", "--seed", "5",
                    threads=threads)
        assert r.returncode == 0, r.stderr
        r = run_cli("noise-sweep", tmp_path / "plan.json", "--out", out / "sweep", threads=threads)
        assert r.returncode == 0, r.stderr
        (out / "sweep" / "timings.csv").unlink()
        trees.append(tree_bytes(out))
    assert trees[0] == trees[1] == trees[2]


def test_threads_must_be_positive():
    assert main(["--threads", "0", "reparam-check", "--trials", "1"]) == EXIT_USAGE
