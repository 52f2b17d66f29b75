"""Training runs with checkpoints and metrics, and the end-to-end throughput benchmark."""

from __future__ import annotations

import json
import logging
import math
import os
import pickle
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import TrainingFault
from ..nn.checkpoint import load_tensors, save_tensors
from ..nn.policy import Policy, PolicyConfig
from ..train.lamb import Lamb
from ..train.ppo import TrainConfig, lr_schedule, scale_lr, train_iteration
from .runner import BatchConfig, BatchRunner
from .scenes import SceneLibrary

log = logging.getLogger(__name__)

LATEST = "latest"


@dataclass
class TrainRun:
    batch: BatchConfig = field(default_factory=BatchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    total_frames: int = 2_000_000
    checkpoint_interval: int = 10  # iterations; 0 writes only the final checkpoint
    seed: int = 0
    out_dir: str = "runs/train"

    @property
    def frames_per_iteration(self) -> int:
        return self.batch.num_envs * self.batch.rollout_length

    @property
    def iterations(self) -> int:
        return max(1, math.ceil(self.total_frames / self.frames_per_iteration))

    def policy_config(self) -> PolicyConfig:
        return replace(self.policy, resolution=self.batch.resolution, channels=self.batch.channels)

    def learning_rate(self, iteration: int) -> float:
        base = self.train.resolved_base_lr(self.batch.sensor)
        minibatch = self.frames_per_iteration // self.train.minibatches
        scaled = scale_lr(base, minibatch, self.train.batch_base)
        if scaled < base:
            return scaled  # batches below the reference size get no warm-down
        return lr_schedule(scaled, base, iteration / self.iterations)


class MetricsWriter:
    """Append-only newline-delimited JSON records."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, record: dict) -> None:
        with open(self.path, "a") as f:
            f.write(json.dumps(record, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def episode_summary(episodes: list[dict]) -> dict:
    if not episodes:
        return {"episodes": 0}
    from ..navsim.metrics import spl, success_rate

    return {"episodes": len(episodes), "success": success_rate(episodes), "spl": spl(episodes),
            "score": float(np.mean([e["score"] for e in episodes]))}


# -- checkpoints ---------------------------------------------------------------
def save_checkpoint(directory, policy: Policy, optimizer: Lamb, runner: BatchRunner, iteration: int,
                    frames: int) -> Path:
    """Write policy, optimizer and loop state, then point ``latest`` at it."""
    root = Path(directory)
    ckpt = root / f"ckpt_{iteration:06d}"
    ckpt.mkdir(parents=True, exist_ok=True)
    save_tensors(ckpt / "policy.bsnn", policy.state_dict())
    save_tensors(ckpt / "optim.bsnn", optimizer.state_tensors())
    state = {"iteration": iteration, "frames": frames, "runner": runner.state_dict(),
             "policy_config": policy.config.to_dict()}
    _atomic_write(ckpt / "state.pkl", pickle.dumps(state))
    _atomic_write(root / LATEST, ckpt.name.encode())
    return ckpt


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def latest_checkpoint(directory) -> Optional[Path]:
    marker = Path(directory) / LATEST
    if not marker.exists():
        return None
    return Path(directory) / marker.read_text().strip()


def load_policy(path, config: Optional[PolicyConfig] = None) -> Policy:
    """Policy from a checkpoint directory (or a bare ``.bsnn`` file plus its config)."""
    path = Path(path)
    if path.is_dir():
        state = pickle.loads((path / "state.pkl").read_bytes())
        config = config or PolicyConfig.from_dict(state["policy_config"])
        path = path / "policy.bsnn"
    policy = Policy(config or PolicyConfig())
    policy.load_state_dict(load_tensors(path))
    return policy


# -- training -------------------------------------------------------------------
def train_run(run: TrainRun, library: SceneLibrary, resume: bool = False,
              stop_after: Optional[int] = None) -> dict:
    """Collect and train until ``run.total_frames``; checkpoints and metrics go to ``run.out_dir``.

    ``stop_after`` ends the loop early after that many iterations of this call
    (used to interrupt a run that is later resumed).
    """
    out = Path(run.out_dir)
    ckpt_dir = out / "checkpoints"
    metrics = MetricsWriter(out / "metrics.jsonl")
    pconf = run.policy_config()
    policy = Policy(pconf, seed=run.seed)
    optimizer = Lamb(policy.parameters(), run.train.lamb_hyper())
    start, frames = 0, 0
    runner: Optional[BatchRunner] = None
    try:
        if resume and latest_checkpoint(ckpt_dir) is not None:
            ckpt = latest_checkpoint(ckpt_dir)
            policy.load_state_dict(load_tensors(ckpt / "policy.bsnn"))
            optimizer.load_state_tensors(load_tensors(ckpt / "optim.bsnn"))
            state = pickle.loads((ckpt / "state.pkl").read_bytes())
            start, frames = state["iteration"], state["frames"]
            runner = BatchRunner.restore(run.batch, library, policy, state["runner"], run.seed)
            log.info("resumed from %s at iteration %d", ckpt, start)
        else:
            runner = BatchRunner(run.batch, library, policy, run.seed)
        last_ckpt = None
        done_here = 0
        for it in range(start, run.iterations):
            if stop_after is not None and done_here >= stop_after:
                break
            t_start = time.perf_counter()
            runner.completed.clear()
            runner.begin_iteration(it)
            buf = runner.collect()
            lr = run.learning_rate(it)
            t0 = time.perf_counter()
            stats = train_iteration(policy, optimizer, buf, run.train, lr)
            runner.timings.add("learning", time.perf_counter() - t0, buf.size)
            runner.end_iteration()
            frames += buf.size
            wall = time.perf_counter() - t_start
            record = {"iteration": it + 1, "frames": frames, "fps": buf.size / wall,
                      **runner.timings.as_record(), **stats, **episode_summary(runner.completed)}
            metrics.write(record)
            log.info("iter %d frames %d fps %.1f loss %.4f", it + 1, frames, record["fps"], stats["loss"])
            done_here += 1
            final = it + 1 == run.iterations
            if final or (run.checkpoint_interval and (it + 1) % run.checkpoint_interval == 0):
                last_ckpt = save_checkpoint(ckpt_dir, policy, optimizer, runner, it + 1, frames)
        return {"iterations": start + done_here, "frames": frames, "checkpoint": str(last_ckpt) if last_ckpt else None,
                "policy": policy}
    except TrainingFault:
        log.error("training fault; last good checkpoint: %s", latest_checkpoint(ckpt_dir))
        raise
    finally:
        if runner is not None:
            runner.close()


# -- throughput --------------------------------------------------------------------
def fps_benchmark(batch: BatchConfig, library: SceneLibrary, policy_config: PolicyConfig = PolicyConfig(),
                  train: TrainConfig = TrainConfig(), inference_batches: int = 256, learning: bool = True,
                  seed: int = 0, warmup_iterations: int = 1) -> dict:
    """End-to-end frames per second of collect + train, with a per-stage breakdown."""
    pconf = replace(policy_config, resolution=batch.resolution, channels=batch.channels)
    policy = Policy(pconf, seed=seed)
    optimizer = Lamb(policy.parameters(), train.lamb_hyper())
    runner = BatchRunner(batch, library, policy, seed)
    run = TrainRun(batch=batch, train=train, policy=pconf, total_frames=batch.num_envs * inference_batches)
    iterations = max(1, math.ceil(inference_batches / batch.rollout_length))
    try:
        def one(it: int) -> None:
            runner.begin_iteration(it)
            buf = runner.collect()
            if learning:
                t0 = time.perf_counter()
                train_iteration(policy, optimizer, buf, train, run.learning_rate(it))
                runner.timings.add("learning", time.perf_counter() - t0, 0)
            runner.end_iteration()

        for it in range(warmup_iterations):
            one(it)
        runner.timings = type(runner.timings)()
        t0 = time.perf_counter()
        for it in range(iterations):
            one(warmup_iterations + it)
        wall = time.perf_counter() - t0
        frames = runner.timings.frames
        per_frame = runner.timings.per_frame_us()
        accounted = sum(runner.timings.totals.values())
        return {
            "num_envs": batch.num_envs,
            "frames": frames,
            "wall_s": wall,
            "fps": frames / wall,
            "breakdown_us": {"sim+render": per_frame["sim_render"], "inference": per_frame["inference"],
                             "learning": per_frame["learning"]},
            "wall_us_per_frame": 1e6 * wall / frames,
            "accounted_fraction": accounted / wall,
        }
    finally:
        runner.close()
