"""Fixed-episode evaluation of a policy (or a scripted agent) on held-out scenes."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np

from ..navsim.agent import (
    FORWARD_STEP,
    SUCCESS_RADIUS,
    TURN_ANGLE,
    Action,
    EnvState,
    EpisodeParams,
    Task,
    begin_episode,
    forward_vector,
    reset_episode,
    task_step,
)
from ..navsim.metrics import spl, success_rate
from ..nn.policy import Policy
from ..nn.tensor import no_grad
from ..render.batch import BatchRenderer, CameraView, Megaframe, RenderConfig
from .runner import observe, sample_actions
from .scenes import SceneLibrary

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpisodeSpec:
    scene_id: str
    start: tuple
    heading: float
    goal: tuple


def episode_set(library: SceneLibrary, per_scene: int, seed: int = 0, task: Task = Task.POINTGOAL,
                params: EpisodeParams = EpisodeParams()) -> list[EpisodeSpec]:
    """Deterministic list of episodes, ``per_scene`` for every scene in library order."""
    out = []
    for k, sid in enumerate(library.ids):
        navmesh = library.load(sid).navmesh
        for e in range(per_scene):
            env = EnvState(navmesh=navmesh, rng=np.random.default_rng([seed, k, e]), task=task, params=params)
            reset_episode(env)
            out.append(EpisodeSpec(sid, tuple(env.start), env.heading, tuple(env.goal)))
    return out


class EvalAgent(Protocol):
    def reset(self, n: int) -> None: ...

    def act(self, obs: np.ndarray, compass: np.ndarray, envs: Sequence[EnvState], rows: np.ndarray,
            first: np.ndarray) -> np.ndarray: ...


class PolicyAgent:
    """Greedy (argmax) actions from a recurrent policy."""

    def __init__(self, policy: Policy, greedy: bool = True, seed: int = 0):
        self.policy = policy
        self.rng = None if greedy else np.random.default_rng(seed)

    def reset(self, n: int) -> None:
        self.state = self.policy.initial_state(n)

    def act(self, obs, compass, envs, rows, first):
        h, c = self.state
        with no_grad():
            out = self.policy(obs, compass, (h[rows], c[rows]), first)
        h[rows], c[rows] = out.state
        actions, _ = sample_actions(out.logits.data, self.rng)
        return actions


class OracleAgent:
    """Scripted shortest-path follower.

    From each position it looks one forward step ahead along every reachable
    heading (multiples of the turn angle) and picks the one that lowers the
    geodesic distance the most; it turns until it faces that heading, steps,
    and stops once inside the success radius. The scan depends only on the
    position, so it runs once per step rather than once per turn.
    """

    needs_obs = False

    def reset(self, n: int) -> None:
        self._plans: dict[int, tuple[tuple, int]] = {}

    def act(self, obs, compass, envs, rows, first):
        actions = np.empty(len(envs), dtype=np.int64)
        for k, (row, env) in enumerate(zip(rows, envs)):
            field = env.distance_field()
            if field(env.position) <= SUCCESS_RADIUS - 1e-6:
                actions[k] = Action.STOP
                continue
            key = tuple(env.position)
            plan = self._plans.get(int(row))
            if plan is None or plan[0] != key:
                plan = (key, self._best_turns(env, field))
                self._plans[int(row)] = plan
            turns = plan[1]
            if turns == 0:
                actions[k] = Action.FORWARD
            else:
                actions[k] = Action.TURN_LEFT if turns > 0 else Action.TURN_RIGHT
                self._plans[int(row)] = (key, turns - 1 if turns > 0 else turns + 1)
        return actions

    @staticmethod
    def _moves(env: EnvState, origins: np.ndarray, heading: float):
        """End points of one forward step from each origin along every heading; (turns, ends, moved)."""
        half = int(round(math.pi / TURN_ANGLE))
        turns = np.array(sorted(range(-half + 1, half + 1), key=lambda t: (abs(t), -t)))
        dirs = FORWARD_STEP * np.stack([forward_vector(heading + t * TURN_ANGLE) for t in turns])
        starts = np.repeat(origins, len(turns), axis=0)
        deltas = np.tile(dirs, (len(origins), 1))
        reach = env.query.reach(starts, starts + deltas)
        frac = np.where(reach < 1.0 - 1e-9, np.clip(reach - 2e-9 / FORWARD_STEP, 0.0, 1.0), 1.0)
        ends = starts + frac[:, None] * deltas
        return turns, ends.reshape(len(origins), len(turns), 3), (frac > 0.0).reshape(len(origins), len(turns))

    def _best_turns(self, env: EnvState, field) -> int:
        """Signed number of turns (left positive) toward the heading whose step gains the most.

        Without sliding, an agent wedged beside a wall corner can have every
        improving heading blocked; then the first step of the best two-step
        sequence is taken instead, even though it briefly moves away.
        """
        here = field(env.position)
        turns, ends, moved = self._moves(env, env.position[None], env.heading)
        ends, moved = ends[0], moved[0]
        g1 = np.array([field(e) if m else np.inf for e, m in zip(ends, moved)])
        k = int(np.argmin(g1))
        if g1[k] < here - 1e-9:
            return int(turns[k])
        firsts = np.flatnonzero(moved)
        _, ends2, moved2 = self._moves(env, ends[firsts], env.heading)
        best, best_k = here, None
        for i, k1 in enumerate(firsts):
            for e, m in zip(ends2[i], moved2[i]):
                if m:
                    g = field(e)
                    if g < best - 1e-9:
                        best, best_k = g, k1
        return int(turns[best_k if best_k is not None else k])


class RandomAgent:
    needs_obs = False

    def __init__(self, seed: int = 0, stop_prob: float = 0.0):
        self.rng = np.random.default_rng(seed)
        self.stop_prob = stop_prob

    def reset(self, n: int) -> None:
        pass

    def act(self, obs, compass, envs, rows, first):
        move = (1.0 - self.stop_prob) / 3.0
        return self.rng.choice(4, size=len(envs), p=[move, move, move, self.stop_prob])


def evaluate(agent, library: SceneLibrary, episodes: Sequence[EpisodeSpec], task: Task = Task.POINTGOAL,
             params: EpisodeParams = EpisodeParams(), render: Optional[RenderConfig] = None,
             sensor: str = "depth", batch_size: int = 64) -> dict:
    """Run every episode once with ``agent``; returns Success/SPL (PointGoal) or mean score."""
    needs_obs = getattr(agent, "needs_obs", True)
    renderer = BatchRenderer(render or RenderConfig()) if needs_obs else None
    assets = {sid: library.load(sid) for sid in dict.fromkeys(e.scene_id for e in episodes)}
    finished: list[dict] = []
    try:
        for lo in range(0, len(episodes), batch_size):
            chunk = episodes[lo:lo + batch_size]
            envs = []
            for k, spec in enumerate(chunk):
                env = EnvState(navmesh=assets[spec.scene_id].navmesh, rng=np.random.default_rng(k), task=task,
                               params=params)
                begin_episode(env, spec.start, spec.heading, spec.goal)
                envs.append(env)
            agent.reset(len(envs))
            active = np.arange(len(envs))
            first = np.ones(len(envs), dtype=bool)
            frame = None
            while len(active):
                act_envs = [envs[i] for i in active]
                obs = None
                if renderer is not None:
                    if frame is None or frame.n != len(active):
                        frame = Megaframe(len(active), renderer.config.resolution, renderer.config.resolution,
                                          color=renderer.config.color)
                    views = [CameraView.from_agent(e.position, e.heading, assets[chunk[i].scene_id])
                             for i, e in zip(active, act_envs)]
                    renderer.render(views, out=frame)
                    obs = observe(frame, sensor)
                compass = np.array([e.compass() for e in act_envs]).reshape(len(active), 2)
                actions = agent.act(obs, compass, act_envs, active, first[active])
                first[active] = False
                still = []
                for i, env, a in zip(active, act_envs, actions):
                    result = task_step(env, int(a))
                    if result.done:
                        finished.append(result.episode)
                    else:
                        still.append(i)
                active = np.array(still, dtype=np.int64)
    finally:
        if renderer is not None:
            renderer.close()
    if task is Task.POINTGOAL:
        return {"success": success_rate(finished), "spl": spl(finished), "episodes": len(finished)}
    return {"score": float(np.mean([e["score"] for e in finished])), "episodes": len(finished)}
