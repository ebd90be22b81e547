import json
import subprocess
import sys

import numpy as np
import pytest

from latentmesh import bench, cli
from latentmesh.errors import ConfigurationError
from latentmesh.io import load_tensor, save_mesh_assets, save_tensor, save_weights
from latentmesh.ldmp import synthetic_mesh_state
from latentmesh.pipeline import init_model_weights, synthetic_pose_sequence

SMALL = {"T": 4, "J": 5, "n_verts": 12, "n_fine": 30, "C": 8, "r": 2, "n_blocks": 2, "c_img": 16, "c_hidden": 8}


@pytest.fixture
def manifest(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"config": SMALL, "seed": 3}))
    return path


def _main(*args):
    return cli.main([str(a) for a in args])


class TestManifest:
    def test_relative_paths_resolve_against_manifest(self, tmp_path):
        sub = tmp_path / "cfg"
        sub.mkdir()
        (sub / "m.json").write_text(json.dumps({"features": "f.bin", "config": SMALL}))
        m = bench.load_manifest(sub / "m.json")
        assert m.features == sub / "f.bin"

    def test_overrides(self, manifest):
        m = bench.load_manifest(manifest, seed=11, mode="sequential", synthetic=True)
        assert m.config.seed == 11 and m.config.exec_mode == "sequential" and m.synthetic

    def test_unknown_keys(self, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps({"featurez": "x"}))
        with pytest.raises(ConfigurationError, match="featurez"):
            bench.load_manifest(tmp_path / "m.json")

    def test_unknown_config_key(self, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps({"config": {"heads": 8}}))
        with pytest.raises(ConfigurationError):
            bench.load_manifest(tmp_path / "m.json")


class TestVerify:
    def test_passes(self, manifest, tmp_path, capsys):
        assert _main("verify", "--config", manifest, "--synthetic", "--out", tmp_path / "o") == 0
        report = json.loads((tmp_path / "o" / "verify.json").read_text())
        assert report["passed"]
        assert {c["name"] for c in report["checks"]} == {
            "dwt_roundtrip", "attention_oracle_parity", "mac_parity", "parallel_sequential_equality"}
        assert json.loads(capsys.readouterr().out)["passed"]

    def test_injected_fault_is_caught(self, manifest, tmp_path):
        assert _main("verify", "--config", manifest, "--synthetic", "--inject-fault", "--out", tmp_path) == 1
        checks = {c["name"]: c for c in json.loads((tmp_path / "verify.json").read_text())["checks"]}
        assert not checks["dwt_roundtrip"]["passed"]
        assert checks["mac_parity"]["passed"]


class TestCost:
    def test_writes_tables(self, manifest, tmp_path):
        assert _main("cost", "--config", manifest, "--out", tmp_path) == 0
        header = (tmp_path / "cost.csv").read_text().splitlines()[0]
        assert header == "name,macs,params,baseline,reduction_pct,source"
        sweep = (tmp_path / "cost_r_sweep.csv").read_text().splitlines()
        assert sweep[0].startswith("r,")
        d = json.loads((tmp_path / "cost.json").read_text())
        for name, macs in d["instrumented"].items():
            assert next(e for e in d["entries"] if e["name"] == name)["macs"] == macs


class TestTiming:
    def test_single_repeat(self, manifest, tmp_path):
        assert _main("timing", "--config", manifest, "--synthetic", "--repeats", 1, "--out", tmp_path) == 0
        t = json.loads((tmp_path / "timing.json").read_text())
        assert t["repeats"] == 1 and t["all_equal"]
        assert t["sequential"]["stddev_ms"] is None
        if t["cores"] < 2:
            assert t["speedup_ok"] is None and t["warnings"]

    def test_zero_repeats(self, manifest):
        assert _main("timing", "--config", manifest, "--synthetic", "--repeats", 0) == 2


class TestRun:
    def test_outputs(self, manifest, tmp_path):
        out = tmp_path / "o"
        assert _main("run", "--config", manifest, "--synthetic", "--out", out) == 0
        assert load_tensor(out / "mesh_intermediate.f32").shape == (12, 3)
        assert load_tensor(out / "mesh_detailed.f32").shape == (30, 3)
        assert load_tensor(out / "pose_out.f32").shape == (5, 3)
        macs = json.loads((out / "macs.json").read_text())
        assert macs["total"] == macs["lifd"] + macs["ldmp"] + macs["upsample"]

    def test_seed_changes_output(self, manifest, tmp_path):
        for seed in (1, 2):
            _main("run", "--config", manifest, "--synthetic", "--seed", seed, "--out", tmp_path / str(seed))
        assert (tmp_path / "1" / "mesh_detailed.f32").read_bytes() != (tmp_path / "2" / "mesh_detailed.f32").read_bytes()

    def test_modes_agree(self, manifest, tmp_path):
        for mode in ("sequential", "parallel"):
            _main("run", "--config", manifest, "--synthetic", "--mode", mode, "--out", tmp_path / mode)
        for name in ("mesh_detailed.f32", "pose_out.f32"):
            assert (tmp_path / "sequential" / name).read_bytes() == (tmp_path / "parallel" / name).read_bytes()

    def test_loaded_inputs_with_metrics(self, tmp_path):
        cfg = bench.load_manifest(None, overrides=SMALL).config
        mesh = synthetic_mesh_state(cfg.n_verts, cfg.n_fine)
        save_mesh_assets(tmp_path / "mesh.json", mesh)
        save_weights(tmp_path / "w.json", init_model_weights(cfg))
        save_tensor(tmp_path / "feat.bin", np.random.default_rng(0).standard_normal((cfg.T, cfg.c_img)))
        poses = synthetic_pose_sequence(cfg.T, cfg.J, 0)
        save_tensor(tmp_path / "poses.bin", poses)
        save_tensor(tmp_path / "gt_mesh.bin", np.zeros((cfg.n_fine, 3)))
        save_tensor(tmp_path / "gt_joints.bin", poses[cfg.T // 2])
        (tmp_path / "m.json").write_text(json.dumps({
            "config": SMALL, "features": "feat.bin", "poses": "poses.bin", "mesh_assets": "mesh.json",
            "weights": "w.json", "ground_truth": {"mesh": "gt_mesh.bin", "joints": "gt_joints.bin"},
        }))
        assert _main("run", "--config", tmp_path / "m.json", "--metrics", "--out", tmp_path / "o") == 0
        metrics = json.loads((tmp_path / "o" / "metrics.json").read_text())
        assert set(metrics) == {"mpvpe", "mpjpe", "pa_mpjpe"}
        losses = json.loads((tmp_path / "o" / "losses.json").read_text())
        assert losses["total"] == pytest.approx(losses["mesh"] + losses["joint"] + 0.1 * losses["normal"]
                                                + 20 * losses["edge"])

    def test_metrics_without_ground_truth(self, manifest, tmp_path):
        assert _main("run", "--config", manifest, "--synthetic", "--metrics", "--out", tmp_path / "o") == 2
        assert not (tmp_path / "o").exists()


class TestExitCodes:
    def test_missing_inputs_without_synthetic(self, manifest, tmp_path):
        assert _main("run", "--config", manifest, "--out", tmp_path / "o") == 2
        assert not (tmp_path / "o").exists()

    def test_missing_file_fails_before_any_output(self, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps({"config": SMALL, "weights": "absent.json", "synthetic": True}))
        assert _main("run", "--config", tmp_path / "m.json", "--out", tmp_path / "o") == 3
        assert not (tmp_path / "o").exists()

    def test_missing_manifest(self, tmp_path):
        assert _main("verify", "--config", tmp_path / "nope.json") == 3

    def test_invalid_config(self, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps({"config": {**SMALL, "r": 99}}))
        assert _main("cost", "--config", tmp_path / "m.json") == 2

    def test_usage_errors(self):
        assert cli.main([]) == 2
        assert cli.main(["explode"]) == 2
        assert cli.main(["run", "--mode", "gpu"]) == 2

    def test_help(self):
        assert cli.main(["--help"]) == 0

    def test_run_needs_out(self, manifest):
        assert _main("run", "--config", manifest, "--synthetic") == 2


def test_module_entry_point(manifest, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "latentmesh", "cost", "--config", str(manifest)],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["command"] == "cost"
