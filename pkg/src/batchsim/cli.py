"""Command-line entry point: gen-scenes, train, eval, bench and render-bench.

Every command resolves its configuration (YAML file, then flags), echoes the
resolved tree to the output directory and writes its results there as JSON.
Exit status is 0 on success, 2 for configuration errors and 3 for runtime faults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from .config import RunConfig, parse_override, resolve, write_resolved
from .errors import BatchSimError, ConfigError
from .navsim.batch import WORKERS_ENV

log = logging.getLogger("batchsim")

EXIT_OK, EXIT_CONFIG, EXIT_FAULT = 0, 2, 3


def int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="batchsim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("-c", "--config", help="YAML run configuration")
        p.add_argument("-o", "--out", dest="out_dir", help="output directory (config key out_dir)")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, help=f"worker threads (overrides {WORKERS_ENV})")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config value by dotted path, e.g. batch.num_envs=16")
        return p

    p = command("gen-scenes", "generate a scene set with manifest and train/val splits")
    p.add_argument("--count", type=int)
    p.add_argument("--scene-seed", type=int, help="seed for the scene set (config key scenes.seed)")

    p = command("train", "train a policy with PPO + Lamb")
    p.add_argument("--manifest", help="scene set directory or manifest.json")
    p.add_argument("--total-frames", type=int)
    p.add_argument("--resume", action="store_true", default=None, help="continue from the latest checkpoint")

    p = command("eval", "evaluate a checkpoint (or a scripted agent) on held-out scenes")
    p.add_argument("--manifest")
    p.add_argument("--checkpoint", help="checkpoint directory written by train")
    p.add_argument("--agent", choices=("policy", "oracle", "random"))
    p.add_argument("--episodes", type=int, help="episodes per scene")

    p = command("bench", "end-to-end frames per second with a per-stage breakdown")
    p.add_argument("--manifest")
    p.add_argument("--inference-batches", type=int)
    p.add_argument("--no-learning", action="store_true", default=None)

    p = command("render-bench", "renderer-only throughput across batch sizes")
    p.add_argument("--scene", help="scene file (.bsc); defaults to the first training scene")
    p.add_argument("--trace", help="JSON list of [x, y, z, heading] camera poses")
    p.add_argument("--batch-sizes", type=int_list, help="e.g. 1,4,16,64,256")
    p.add_argument("--resolutions", type=int_list, help="e.g. 64,128")
    return parser


_FLAG_KEYS = {
    "out_dir": "out_dir",
    "seed": "seed",
    "workers": "batch.workers",
    "count": "scenes.count",
    "scene_seed": "scenes.seed",
    "manifest": "scenes.manifest",
    "total_frames": "run.total_frames",
    "resume": "run.resume",
    "checkpoint": "eval.checkpoint",
    "agent": "eval.agent",
    "episodes": "eval.episodes_per_scene",
    "inference_batches": "bench.inference_batches",
    "batch_sizes": "bench.batch_sizes",
    "resolutions": "bench.resolutions",
}


def resolve_args(args: argparse.Namespace) -> RunConfig:
    """Config file < worker env var < dedicated flags < ``--set`` overrides."""
    overrides: dict = {}
    problems = []
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            overrides["batch.workers"] = int(env)
        except ValueError:
            problems.append(f"{WORKERS_ENV}={env!r} is not an integer")
    for attr, key in _FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "no_learning", None):
        overrides["bench.learning"] = False
    for item in args.overrides:
        try:
            key, value = parse_override(item)
        except ConfigError as e:
            problems += e.problems
            continue
        overrides[key] = value
    if problems:
        raise ConfigError(problems)
    return resolve(args.config, overrides)


def scene_library(cfg: RunConfig, split: str):
    from .rollout.scenes import SceneLibrary, generated_split

    s = cfg.scenes
    if s.manifest is not None:
        return SceneLibrary.from_manifest(s.manifest, split)
    return generated_split(s.count, s.seed, s.generator, s.val_fraction, split)


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, default=float) + "\n")


# -- commands ------------------------------------------------------------------------
def cmd_gen_scenes(cfg: RunConfig) -> dict:
    from .rollout.scenes import write_scene_set

    doc = write_scene_set(cfg.out_dir, cfg.scenes.count, cfg.scenes.seed, cfg.scenes.generator,
                          cfg.scenes.val_fraction)
    print(f"wrote {doc['count']} scenes to {cfg.out_dir} "
          f"({len(doc['splits']['train'])} train, {len(doc['splits']['val'])} val)")
    return {"count": doc["count"], "manifest": str(Path(cfg.out_dir) / "manifest.json")}


def cmd_train(cfg: RunConfig) -> dict:
    from .rollout.training import TrainRun, train_run

    run = TrainRun(batch=cfg.batch, train=cfg.train, policy=cfg.policy, total_frames=cfg.run.total_frames,
                   checkpoint_interval=cfg.run.checkpoint_interval, seed=cfg.seed, out_dir=cfg.out_dir)
    library = scene_library(cfg, cfg.scenes.train_split)
    result = train_run(run, library, resume=cfg.run.resume)
    print(f"trained {result['iterations']} iterations, {result['frames']} frames; checkpoint {result['checkpoint']}")
    return {k: v for k, v in result.items() if k != "policy"}


def make_agent(cfg: RunConfig):
    from .rollout.evaluate import OracleAgent, PolicyAgent, RandomAgent
    from .rollout.training import load_policy

    if cfg.eval.agent == "oracle":
        return OracleAgent()
    if cfg.eval.agent == "random":
        return RandomAgent(cfg.seed)
    if cfg.eval.checkpoint is None:
        raise ConfigError(["eval.checkpoint: required field missing for agent 'policy'"])
    from .rollout.training import latest_checkpoint

    # a run's checkpoint directory stands for its latest checkpoint
    path = latest_checkpoint(cfg.eval.checkpoint) or cfg.eval.checkpoint
    return PolicyAgent(load_policy(path))


def cmd_eval(cfg: RunConfig) -> dict:
    from .navsim.agent import Task
    from .rollout.evaluate import episode_set, evaluate

    agent = make_agent(cfg)
    library = scene_library(cfg, cfg.scenes.eval_split)
    task = Task(cfg.batch.task)
    params = cfg.batch.episode_params()
    episodes = episode_set(library, cfg.eval.episodes_per_scene, cfg.eval.seed, task, params)
    from .navsim.batch import default_workers

    workers = cfg.batch.workers or default_workers()
    result = evaluate(agent, library, episodes, task, params, cfg.batch.render_config(workers), cfg.batch.sensor,
                      cfg.eval.batch_size)
    print("  ".join(f"{k} {v:.4f}" if isinstance(v, float) else f"{k} {v}" for k, v in result.items()))
    return result


def cmd_bench(cfg: RunConfig) -> dict:
    from .rollout.training import fps_benchmark

    library = scene_library(cfg, cfg.scenes.train_split)
    reports = [fps_benchmark(cfg.batch, library, cfg.policy_config(), cfg.train, cfg.bench.inference_batches,
                             cfg.bench.learning, cfg.seed, cfg.bench.warmup_iterations)
               for _ in range(cfg.bench.repeats)]
    for r in reports:
        b = r["breakdown_us"]
        print(f"N={r['num_envs']} fps {r['fps']:.1f}  sim+render {b['sim+render']:.0f} us  "
              f"inference {b['inference']:.0f} us  learning {b['learning']:.0f} us  "
              f"(accounted {100 * r['accounted_fraction']:.1f}% of wall)")
    return {"runs": reports}


def load_trace(path: str):
    import numpy as np

    try:
        poses = json.loads(Path(path).read_text())
    except (OSError, ValueError) as e:
        raise ConfigError([f"{path}: cannot read camera trace ({e})"]) from None
    try:
        return [(np.array(p[:3], dtype=np.float64), float(p[3])) for p in poses]
    except (TypeError, IndexError, ValueError):
        raise ConfigError([f"{path}: trace entries must be [x, y, z, heading]"]) from None


def cmd_render_bench(cfg: RunConfig, scene: Optional[str], trace: Optional[str]) -> dict:
    from .navsim.batch import default_workers
    from .render.batch import RenderConfig
    from .render.bench import camera_trace, format_table, render_bench
    from .scene.fileio import load_scene

    if scene is not None:
        asset = load_scene(scene)
    else:
        library = scene_library(cfg, cfg.scenes.train_split)
        asset = library.load(library.ids[0])
    poses = load_trace(trace) if trace else camera_trace(asset, cfg.bench.trace_length, cfg.seed)
    config = RenderConfig(color=cfg.batch.sensor == "rgb", workers=cfg.batch.workers or default_workers())
    rows = []
    for _ in range(cfg.bench.repeats):
        rows.append(render_bench(asset, poses, cfg.bench.batch_sizes, cfg.bench.resolutions,
                                 cfg.bench.min_frames, config=config))
    for table in rows:
        print(format_table(table))
    return {"scene": asset.id, "runs": [[{"batch_size": r.batch_size, "resolution": r.resolution, "frames": r.frames,
                                          "seconds": r.seconds, "fps": r.fps} for r in t] for t in rows]}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_args(args)
        out = Path(cfg.out_dir)
        write_resolved(cfg, out, args.command)
        t0 = time.perf_counter()
        if args.command == "gen-scenes":
            result = cmd_gen_scenes(cfg)
        elif args.command == "train":
            result = cmd_train(cfg)
        elif args.command == "eval":
            result = cmd_eval(cfg)
        elif args.command == "bench":
            result = cmd_bench(cfg)
        else:
            result = cmd_render_bench(cfg, args.scene, args.trace)
        result["wall_s"] = time.perf_counter() - t0
        write_json(out / f"{args.command}.json", result)
    except ConfigError as e:
        print("configuration error:", file=sys.stderr)
        for p in e.problems:
            print(f"  - {p}", file=sys.stderr)
        return EXIT_CONFIG
    except (BatchSimError, OSError, KeyError) as e:
        log.error("%s failed: %s", args.command, e)
        return EXIT_FAULT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
