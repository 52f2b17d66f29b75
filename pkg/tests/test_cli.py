from __future__ import annotations

import json

import pytest
import yaml

from batchsim.cli import main

SMALL = """
seed: 1
scenes:
  generator: {grid: [3, 3]}
batch: {num_envs: 4, num_scenes: 2, rollout_length: 4, resolution: 16, max_steps: 20, workers: 1}
train: {minibatches: 2, micro_envs: 2}
policy: {stages: [16, 32], embed: 24, hidden: 12}
run: {total_frames: 32, checkpoint_interval: 1}
eval: {episodes_per_scene: 3}
bench: {inference_batches: 4}
"""


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenes")
    assert main(["gen-scenes", "-o", str(out), "--count", "10", "--scene-seed", "5",
                 "--set", "scenes.generator.grid=[3,3]"]) == 0
    return out


@pytest.fixture()
def small_cfg(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL)
    return str(path)


def test_gen_scenes_writes_files_and_manifest(scene_dir):
    files = sorted(scene_dir.glob("scene_*.bsc"))
    assert [f.name for f in files] == [f"scene_{k:04d}.bsc" for k in range(10)]
    manifest = json.loads((scene_dir / "manifest.json").read_text())
    ids = {s["id"] for s in manifest["scenes"]}
    assert len(ids) == 10 and all(len(s["sha256"]) == 64 for s in manifest["scenes"])
    train = set(json.loads((scene_dir / "train.json").read_text())["scenes"])
    val = set(json.loads((scene_dir / "val.json").read_text())["scenes"])
    assert train.isdisjoint(val)
    assert train | val == ids


def test_gen_scenes_is_byte_identical(scene_dir, tmp_path):
    assert main(["gen-scenes", "-o", str(tmp_path), "--count", "10", "--scene-seed", "5",
                 "--set", "scenes.generator.grid=[3,3]"]) == 0
    for f in scene_dir.glob("scene_*.bsc"):
        assert (tmp_path / f.name).read_bytes() == f.read_bytes()
    assert (tmp_path / "manifest.json").read_bytes() == (scene_dir / "manifest.json").read_bytes()


def test_missing_required_field(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 1\n")
    assert main(["train", "-c", str(cfg)]) == 2
    assert "out_dir" in capsys.readouterr().err


def test_every_problem_is_listed(tmp_path, capsys):
    code = main(["train", "-o", str(tmp_path), "--set", "batch.num_envs=200", "--set", "batch.num_scenes=2",
                 "--set", "train.gamma=3", "--set", "policy.hidden=x"])
    assert code == 2
    err = capsys.readouterr().err
    for needle in ("share cap", "gamma", "policy.hidden"):
        assert needle in err


def test_eval_oracle_prints_success(scene_dir, tmp_path, capsys):
    code = main(["eval", "-o", str(tmp_path), "--manifest", str(scene_dir / "manifest.json"), "--agent", "oracle",
                 "--episodes", "4"])
    assert code == 0
    out = capsys.readouterr().out
    assert "success 1.0000" in out
    result = json.loads((tmp_path / "eval.json").read_text())
    assert result["success"] == 1.0


def test_train_then_eval_checkpoint(scene_dir, tmp_path, small_cfg):
    manifest = str(scene_dir / "manifest.json")
    assert main(["train", "-c", small_cfg, "-o", str(tmp_path / "run"), "--manifest", manifest]) == 0
    lines = (tmp_path / "run" / "metrics.jsonl").read_text().splitlines()
    records = [json.loads(line) for line in lines]
    assert [r["iteration"] for r in records] == [1, 2]
    for key in ("frames", "fps", "lr", "trust_ratio", "loss", "sim_render_us", "inference_us", "learning_us"):
        assert key in records[0]
    assert main(["eval", "-c", small_cfg, "-o", str(tmp_path / "ev"), "--manifest", manifest,
                 "--checkpoint", str(tmp_path / "run" / "checkpoints")]) == 0
    assert json.loads((tmp_path / "ev" / "eval.json").read_text())["episodes"] == 6


def test_resolved_config_reproduces_the_run(scene_dir, tmp_path, small_cfg):
    manifest = str(scene_dir / "manifest.json")
    assert main(["bench", "-c", small_cfg, "-o", str(tmp_path / "a"), "--manifest", manifest]) == 0
    resolved = tmp_path / "a" / "bench.config.yaml"
    tree = yaml.safe_load(resolved.read_text())
    # defaults are materialized
    assert tree["train"]["gamma"] == 0.99 and tree["batch"]["share_cap"] == 32
    assert main(["bench", "-c", str(resolved), "-o", str(tmp_path / "b")]) == 0
    again = yaml.safe_load((tmp_path / "b" / "bench.config.yaml").read_text())
    tree.pop("out_dir"), again.pop("out_dir")
    assert tree == again
    report = json.loads((tmp_path / "b" / "bench.json").read_text())["runs"][0]
    assert set(report["breakdown_us"]) == {"sim+render", "inference", "learning"}


def test_render_bench_table(scene_dir, tmp_path, capsys):
    code = main(["render-bench", "-o", str(tmp_path), "--scene", str(scene_dir / "scene_0000.bsc"),
                 "--batch-sizes", "1,4,16,64,256", "--set", "bench.min_frames=64"])
    assert code == 0
    table = capsys.readouterr().out.strip().splitlines()
    assert len(table) == 6
    rows = json.loads((tmp_path / "render-bench.json").read_text())["runs"][0]
    assert [r["batch_size"] for r in rows] == [1, 4, 16, 64, 256]


def test_render_bench_custom_trace(scene_dir, tmp_path):
    trace = tmp_path / "trace.json"
    trace.write_text(json.dumps([[1.0, 0.0, 1.0, 0.0], [1.2, 0.0, 1.0, 0.5]]))
    assert main(["render-bench", "-o", str(tmp_path / "o"), "--scene", str(scene_dir / "scene_0001.bsc"),
                 "--trace", str(trace), "--batch-sizes", "2", "--set", "bench.min_frames=4"]) == 0


def test_runtime_fault_exit_code(tmp_path):
    assert main(["eval", "-o", str(tmp_path), "--manifest", str(tmp_path / "missing.json"), "--agent", "oracle"]) == 3


def test_worker_env_override(scene_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("BATCHSIM_WORKERS", "3")
    assert main(["gen-scenes", "-o", str(tmp_path), "--count", "2"]) == 0
    tree = yaml.safe_load((tmp_path / "gen-scenes.config.yaml").read_text())
    assert tree["batch"]["workers"] == 3
    assert main(["gen-scenes", "-o", str(tmp_path), "--count", "2", "--workers", "2"]) == 0
    tree = yaml.safe_load((tmp_path / "gen-scenes.config.yaml").read_text())
    assert tree["batch"]["workers"] == 2
