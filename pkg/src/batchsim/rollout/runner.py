"""The batch loop: simulate N envs -> render N views -> one policy call -> N actions.

Every hand-off between components carries the whole batch; the runner counts
those calls so tests can check that nothing is dispatched per environment.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import InvalidSpecError
from ..navsim.agent import EnvState, EpisodeParams, Task
from ..navsim.batch import SimBatch, WorkerPool, make_envs, simulate_batch
from ..nn.policy import Policy
from ..nn.tensor import no_grad
from ..render.batch import BatchRenderer, CameraView, Megaframe, RenderConfig
from ..scene.store import AssetStore
from ..train.ppo import RolloutBuffer
from .scenes import Rotation, SceneLibrary

log = logging.getLogger(__name__)

SENSORS = ("depth", "rgb")


@dataclass(frozen=True)
class BatchConfig:
    num_envs: int = 64
    num_scenes: int = 4
    rollout_length: int = 32
    share_cap: int = 32
    task: str = "pointgoal"
    sensor: str = "depth"
    resolution: int = 64
    max_goal_distance: float = 30.0
    max_steps: int = 500
    rotate_every: int = 1  # iterations between scene swaps; 0 keeps the first K scenes
    workers: Optional[int] = None

    def validate(self) -> list[str]:
        problems = []
        if self.num_envs < 1 or self.num_scenes < 1:
            problems.append("num_envs and num_scenes must be positive")
        elif math.ceil(self.num_envs / self.num_scenes) > self.share_cap:
            problems.append(f"num_envs / num_scenes = {self.num_envs / self.num_scenes:g} exceeds the "
                            f"share cap {self.share_cap}")
        if self.rollout_length < 1:
            problems.append("rollout_length must be at least 1")
        if self.sensor not in SENSORS:
            problems.append(f"sensor must be one of {SENSORS}, got {self.sensor!r}")
        if self.task not in {t.value for t in Task}:
            problems.append(f"unknown task {self.task!r}")
        if self.resolution < 1:
            problems.append("resolution must be positive")
        if self.max_goal_distance < 1.0:
            problems.append("max_goal_distance must be at least the 1 m minimum goal distance")
        if self.max_steps < 1:
            problems.append("max_steps must be positive")
        return problems

    def check(self) -> None:
        problems = self.validate()
        if problems:
            raise InvalidSpecError("; ".join(problems))

    @property
    def channels(self) -> int:
        return 3 if self.sensor == "rgb" else 1

    def episode_params(self) -> EpisodeParams:
        return EpisodeParams(max_geodesic=self.max_goal_distance, max_steps=self.max_steps)

    def render_config(self, workers: int = 1) -> RenderConfig:
        ss = 2 if self.resolution >= 128 else 1
        return RenderConfig(resolution=self.resolution, supersample=ss, color=self.sensor == "rgb",
                            workers=workers)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StageTimings:
    """Per-frame cost of each stage: running totals plus an exponential average."""

    sim_render_us: float = 0.0
    inference_us: float = 0.0
    learning_us: float = 0.0
    totals: dict = field(default_factory=lambda: {"sim_render": 0.0, "inference": 0.0, "learning": 0.0})
    frames: int = 0
    decay: float = 0.9

    def add(self, stage: str, seconds: float, frames: int) -> None:
        self.totals[stage] += seconds
        if frames == 0:
            return
        per_frame = 1e6 * seconds / frames
        attr = f"{stage}_us"
        old = getattr(self, attr)
        setattr(self, attr, per_frame if old == 0.0 else self.decay * old + (1 - self.decay) * per_frame)

    def per_frame_us(self) -> dict:
        n = max(self.frames, 1)
        return {k: 1e6 * v / n for k, v in self.totals.items()}

    def as_record(self) -> dict:
        return {"sim_render_us": self.sim_render_us, "inference_us": self.inference_us,
                "learning_us": self.learning_us}


def sample_actions(logits: np.ndarray, rng: Optional[np.random.Generator]) -> tuple[np.ndarray, np.ndarray]:
    """Categorical sample (or argmax when ``rng`` is None) and its log-probability."""
    x = logits.astype(np.float64)
    x = x - x.max(axis=1, keepdims=True)
    logp_all = x - np.log(np.exp(x).sum(axis=1, keepdims=True))
    if rng is None:
        actions = np.argmax(logits, axis=1)
    else:
        cdf = np.cumsum(np.exp(logp_all), axis=1)
        u = rng.random(len(x))[:, None] * cdf[:, -1:]
        actions = np.minimum((cdf <= u).sum(axis=1), x.shape[1] - 1)
    return actions.astype(np.int64), logp_all[np.arange(len(x)), actions]


def observe(frame: Megaframe, sensor: str) -> np.ndarray:
    """Policy input ``(N, C, H, W)`` from a rendered megaframe; depth is scaled to [0, 1]."""
    if sensor == "rgb":
        return frame.color_tiles().transpose(0, 3, 1, 2).astype(np.float32)
    return frame.depth_tiles(normalize=True)[:, None].astype(np.float32)


def compass_of(envs) -> np.ndarray:
    return np.array([env.compass() for env in envs], dtype=np.float64).reshape(len(envs), 2)


class BatchRunner:
    """N environments over K resident scenes, a renderer and a policy, stepped in lockstep."""

    def __init__(self, config: BatchConfig, library: SceneLibrary, policy: Policy, seed: int = 0,
                 pool: Optional[WorkerPool] = None, _restore: Optional[dict] = None):
        config.check()
        self.config = config
        self.library = library
        self.policy = policy
        self.seed = seed
        self.pool = pool if pool is not None else WorkerPool(config.workers)
        self._own_pool = pool is None
        self.calls = {"simulate": 0, "render": 0, "inference": 0}
        self.timings = StageTimings()
        self.completed: list[dict] = []
        if _restore is None:
            self._fresh(seed)
        else:
            self._load(_restore)
        self.renderer = BatchRenderer(config.render_config(self.pool.num_workers), self.store)
        self.frame = Megaframe(config.num_envs, config.resolution, config.resolution,
                               color=config.sensor == "rgb")
        self.obs = self._render()
        self.compass = compass_of(self.envs)

    # -- construction -----------------------------------------------------
    def _fresh(self, seed: int) -> None:
        cfg = self.config
        self.rotation = Rotation(self.library.ids, seed)
        self.store = AssetStore(cfg.num_scenes, self.library.load, cfg.share_cap)
        first = []
        while len(first) < min(cfg.num_scenes, len(self.library)):
            sid = self.rotation.next()
            if sid not in first:
                first.append(sid)
        handles = [self.store.acquire(first[i % len(first)]) for i in range(cfg.num_envs)]
        seeds = [np.random.SeedSequence([seed, i]) for i in range(cfg.num_envs)]
        self.envs = make_envs(handles, seeds, Task(cfg.task), cfg.episode_params())
        self.action_rng = np.random.default_rng([seed, cfg.num_envs, 7])
        self.state = self.policy.initial_state(cfg.num_envs)
        self.resets = np.ones(cfg.num_envs, dtype=bool)
        self.batch = SimBatch(self.envs, Task(cfg.task), self.store)

    def close(self) -> None:
        self.renderer.close()
        self.store.close()
        if self._own_pool:
            self.pool.close()

    # -- one step of each component -----------------------------------------
    def _render(self) -> np.ndarray:
        views = [CameraView.from_agent(env.position, env.heading, env.handle) for env in self.envs]
        self.renderer.render(views, out=self.frame)
        self.calls["render"] += 1
        return observe(self.frame, self.config.sensor)

    def act(self, greedy: bool = False):
        """Policy outputs for the current observations (no state change)."""
        with no_grad():
            out = self.policy(self.obs, self.compass, self.state, self.resets)
        self.calls["inference"] += 1
        actions, logp = sample_actions(out.logits.data, None if greedy else self.action_rng)
        return actions, logp, out.value.data.astype(np.float64), out.state

    def step(self, actions: np.ndarray):
        simulate_batch(self.batch, actions, self.pool)
        self.calls["simulate"] += 1
        results = self.batch.results
        rewards = np.array([r.reward for r in results])
        dones = np.array([r.done for r in results])
        for r in results:
            if r.episode is not None:
                self.completed.append(r.episode)
        self.obs = self._render()
        self.compass = compass_of(self.envs)
        return rewards, dones

    # -- rollouts -------------------------------------------------------------
    def collect(self, length: Optional[int] = None, greedy: bool = False) -> RolloutBuffer:
        """Run ``length`` batch steps, recording what PPO needs."""
        cfg = self.config
        length = length or cfg.rollout_length
        n = cfg.num_envs
        buf = RolloutBuffer.empty(length, n, self.obs.shape[1:], self.policy.config.hidden)
        buf.state0 = (self.state[0].copy(), self.state[1].copy())
        for t in range(length):
            t0 = time.perf_counter()
            actions, logp, values, state = self.act(greedy)
            buf.obs[t] = self.obs
            buf.compass[t] = self.compass
            buf.resets[t] = self.resets
            buf.actions[t] = actions
            buf.logp[t] = logp
            buf.values[t] = values
            self.state = state
            t1 = time.perf_counter()
            rewards, dones = self.step(actions)
            buf.rewards[t] = rewards
            buf.dones[t] = dones
            self.resets = dones.copy()
            t2 = time.perf_counter()
            self.timings.add("inference", t1 - t0, n)
            self.timings.add("sim_render", t2 - t1, n)
            self.timings.frames += n
        t0 = time.perf_counter()
        _, _, values, _ = self.act(greedy=True)
        buf.values[length] = values
        self.timings.add("inference", time.perf_counter() - t0, n)
        return buf

    # -- scene rotation ---------------------------------------------------------
    def begin_iteration(self, iteration: int) -> None:
        """Schedule the next scene swap; the load overlaps this iteration's rollout."""
        cfg = self.config
        t0 = time.perf_counter()
        if cfg.rotate_every and len(self.library) > cfg.num_scenes and iteration % cfg.rotate_every == 0 \
                and not self.store.pending:
            resident = self.store.resident_ids
            sid = self.rotation.next()
            while sid in resident:
                sid = self.rotation.next()
            self.store.rotate(resident + [sid])
        self.timings.add("sim_render", time.perf_counter() - t0, 0)

    def end_iteration(self) -> None:
        t0 = time.perf_counter()
        self.store.settle()
        self.timings.add("sim_render", time.perf_counter() - t0, 0)

    # -- checkpointing --------------------------------------------------------
    def state_dict(self) -> dict:
        envs = []
        for env in self.envs:
            envs.append({
                "scene_id": env.scene_id,
                "rng": env.rng.bit_generator.state,
                "position": env.position, "heading": env.heading, "start": env.start, "goal": env.goal,
                "step_count": env.step_count, "path_length": env.path_length,
                "start_geodesic": env.start_geodesic, "prev_geodesic": env.prev_geodesic,
                "visited_cells": sorted(env.visited_cells), "done": env.done, "episodes": env.episodes,
            })
        return {
            "envs": envs,
            "store": self.store.snapshot(),
            "rotation": self.rotation.state(),
            "action_rng": self.action_rng.bit_generator.state,
            "state": (self.state[0].copy(), self.state[1].copy()),
            "resets": self.resets.copy(),
        }

    def _load(self, snap: dict) -> None:
        cfg = self.config
        self.rotation = Rotation(**snap["rotation"])
        self.store, handles = AssetStore.restore(snap["store"], self.library.load,
                                                 [e["scene_id"] for e in snap["envs"]])
        self.envs = []
        for e, handle in zip(snap["envs"], handles):
            rng = np.random.default_rng()
            rng.bit_generator.state = e["rng"]
            env = EnvState(navmesh=handle.asset.navmesh, rng=rng, task=Task(cfg.task), params=cfg.episode_params())
            env.attach(handle)
            for key in ("position", "start", "goal"):
                setattr(env, key, np.array(e[key]))
            for key in ("heading", "step_count", "path_length", "start_geodesic", "prev_geodesic", "done",
                        "episodes"):
                setattr(env, key, e[key])
            env.visited_cells = {tuple(c) for c in e["visited_cells"]}
            self.envs.append(env)
        self.action_rng = np.random.default_rng()
        self.action_rng.bit_generator.state = snap["action_rng"]
        self.state = (snap["state"][0].copy(), snap["state"][1].copy())
        self.resets = snap["resets"].copy()
        self.batch = SimBatch(self.envs, Task(cfg.task), self.store)

    @classmethod
    def restore(cls, config: BatchConfig, library: SceneLibrary, policy: Policy, snap: dict, seed: int = 0,
                pool: Optional[WorkerPool] = None) -> "BatchRunner":
        return cls(config, library, policy, seed, pool, _restore=snap)
