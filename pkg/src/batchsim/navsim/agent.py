"""Agent kinematics, episode sampling and task logic for one environment."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ContractViolation, EpisodeSamplingError
from ..scene.asset import NavMesh
from ..scene.store import AssetHandle
from .pathfind import DistanceField, NavQuery

FORWARD_STEP = 0.25
TURN_ANGLE = math.radians(10.0)
SUCCESS_RADIUS = 0.2
SLACK_PENALTY = 0.01
SUCCESS_BONUS = 2.5
EXPLORE_CELL = 0.5
EXPLORE_BONUS = 0.1
SAMPLE_TRIES = 100


class Action(enum.IntEnum):
    FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    STOP = 3


class Task(str, enum.Enum):
    POINTGOAL = "pointgoal"
    FLEE = "flee"
    EXPLORE = "explore"


@dataclass(frozen=True)
class EpisodeParams:
    min_geodesic: float = 1.0
    max_geodesic: float = 30.0
    max_steps: int = 500


def forward_vector(heading: float) -> np.ndarray:
    """Unit view direction for a heading measured counter-clockwise from -z (seen from +y)."""
    return np.array([-math.sin(heading), 0.0, -math.cos(heading)])


def wrap_angle(a: float) -> float:
    return math.remainder(a, 2.0 * math.pi)


@dataclass(eq=False)
class EnvState:
    navmesh: NavMesh
    rng: np.random.Generator
    task: Task = Task.POINTGOAL
    params: EpisodeParams = EpisodeParams()
    handle: Optional[AssetHandle] = None
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    heading: float = 0.0
    start: np.ndarray = field(default_factory=lambda: np.zeros(3))
    goal: np.ndarray = field(default_factory=lambda: np.zeros(3))
    step_count: int = 0
    path_length: float = 0.0
    start_geodesic: float = 0.0
    prev_geodesic: float = 0.0
    visited_cells: set = field(default_factory=set)
    done: bool = True
    episodes: int = 0
    field_: Optional[DistanceField] = field(default=None, repr=False)

    @property
    def query(self) -> NavQuery:
        return NavQuery.of(self.navmesh)

    @property
    def scene_id(self) -> Optional[str]:
        return None if self.handle is None else self.handle.scene_id

    def attach(self, handle: AssetHandle) -> None:
        self.handle = handle
        self.navmesh = handle.asset.navmesh
        self.field_ = None

    def distance_field(self) -> DistanceField:
        if self.field_ is None:
            target = self.goal if self.task is Task.POINTGOAL else self.start
            self.field_ = self.query.field(target)
        return self.field_

    def compass(self) -> tuple[float, float]:
        """Euclidean distance and bearing (radians, positive to the left) to the goal."""
        v = self.goal - self.position
        dist = math.hypot(v[0], v[2])
        if dist == 0.0:
            return 0.0, 0.0
        goal_heading = math.atan2(-v[0], -v[2])
        return dist, wrap_angle(goal_heading - self.heading)

    def __getstate__(self):
        state = dict(self.__dict__)
        state["field_"] = None
        return state


@dataclass
class StepResult:
    reward: float
    done: bool
    success: bool
    position: np.ndarray
    heading: float
    compass_goal: tuple[float, float]
    collision: bool
    episode: Optional[dict] = None

    def __post_init__(self):
        if self.success and not self.done:
            raise ContractViolation("success without done")


def _explore_cell(query: NavQuery, p: np.ndarray) -> tuple[int, int, int]:
    return (query.locate(p), int(math.floor(p[0] / EXPLORE_CELL)), int(math.floor(p[2] / EXPLORE_CELL)))


def step_agent(env: EnvState, action: int) -> tuple[EnvState, bool]:
    """Apply one low-level action. Returns the (mutated) env and the collision flag."""
    if env.done:
        raise ContractViolation("step on an environment whose episode is done")
    action = Action(action)
    collision = False
    if action is Action.TURN_LEFT:
        env.heading = wrap_angle(env.heading + TURN_ANGLE)
    elif action is Action.TURN_RIGHT:
        env.heading = wrap_angle(env.heading - TURN_ANGLE)
    elif action is Action.FORWARD:
        delta = FORWARD_STEP * forward_vector(env.heading)
        reach = float(env.query.reach(env.position, env.position + delta)[0])
        if reach < 1.0 - 1e-9:
            collision = True
            # back off the half-plane slack so the stop point is on, not past, the boundary
            frac = min(max(reach - 2e-9 / FORWARD_STEP, 0.0), 1.0)
        else:
            frac = 1.0
        moved = frac * delta
        env.position = env.position + moved
        env.path_length += float(np.linalg.norm(moved))
    return env, collision


def reset_episode(env: EnvState, task: Optional[Task] = None) -> EnvState:
    """Sample a fresh episode from the env's own generator."""
    if task is not None:
        env.task = Task(task)
    q = env.query
    p = env.params
    rng = env.rng
    for _ in range(SAMPLE_TRIES):
        start = q.sample_point(rng)
        heading = float(rng.uniform(-math.pi, math.pi))
        if env.task is Task.POINTGOAL:
            goal = q.sample_point(rng)
            geo = q.geodesic(start, goal)
            if not p.min_geodesic <= geo <= p.max_geodesic:
                continue
        else:
            goal, geo = start.copy(), 0.0
        break
    else:
        raise EpisodeSamplingError(f"no episode with geodesic in [{p.min_geodesic}, {p.max_geodesic}] "
                                   f"after {SAMPLE_TRIES} tries")
    return begin_episode(env, start, heading, goal, geo)


def begin_episode(env: EnvState, start, heading: float, goal=None, geodesic: Optional[float] = None) -> EnvState:
    """Start a given episode; ``goal`` is ignored (set to ``start``) for Flee and Explore."""
    q = env.query
    start = np.asarray(start, dtype=np.float64).copy()
    if env.task is Task.POINTGOAL:
        goal = np.asarray(goal, dtype=np.float64).copy()
        geo = q.geodesic(start, goal) if geodesic is None else geodesic
    else:
        goal, geo = start.copy(), 0.0
    env.position = start
    env.start = start.copy()
    env.goal = goal
    env.heading = float(heading)
    env.step_count = 0
    env.path_length = 0.0
    env.start_geodesic = geo
    env.prev_geodesic = geo
    env.field_ = None
    env.visited_cells = {_explore_cell(q, start)} if env.task is Task.EXPLORE else set()
    env.done = False
    env.episodes += 1
    return env


def task_step(env: EnvState, action: int) -> StepResult:
    action = Action(action)
    prev_pos = env.position
    env, collision = step_agent(env, action)
    env.step_count += 1
    moved = env.position is not prev_pos
    reward = 0.0
    success = False
    done = action is Action.STOP or env.step_count >= env.params.max_steps

    if env.task is Task.POINTGOAL:
        geo = env.distance_field()(env.position) if moved else env.prev_geodesic
        reward = (env.prev_geodesic - geo) - SLACK_PENALTY
        if action is Action.STOP and geo <= SUCCESS_RADIUS:
            success = True
            reward += SUCCESS_BONUS
        env.prev_geodesic = geo
        score = float(success)
    elif env.task is Task.FLEE:
        geo = env.distance_field()(env.position) if moved else env.prev_geodesic
        reward = geo - env.prev_geodesic
        env.prev_geodesic = geo
        score = geo
    else:
        if moved:
            cell = _explore_cell(env.query, env.position)
            if cell not in env.visited_cells:
                env.visited_cells.add(cell)
                reward = EXPLORE_BONUS
        score = float(len(env.visited_cells))

    episode = None
    if done:
        env.done = True
        episode = {
            "success": success,
            "shortest_path": env.start_geodesic,
            "path_length": env.path_length,
            "final_geodesic": env.prev_geodesic,
            "score": score,
            "steps": env.step_count,
            "scene_id": env.scene_id,
        }
    return StepResult(
        reward=float(reward),
        done=done,
        success=success,
        position=env.position.copy(),
        heading=env.heading,
        compass_goal=env.compass(),
        collision=collision,
        episode=episode,
    )
