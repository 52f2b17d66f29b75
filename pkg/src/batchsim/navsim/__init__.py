"""Batch CPU navigation simulator."""

from .agent import (
    FORWARD_STEP,
    SUCCESS_RADIUS,
    TURN_ANGLE,
    Action,
    EnvState,
    EpisodeParams,
    StepResult,
    Task,
    begin_episode,
    forward_vector,
    reset_episode,
    step_agent,
    task_step,
)
from .batch import SimBatch, WorkerPool, make_envs, simulate_batch
from .metrics import spl, success_rate
from .pathfind import DistanceField, NavQuery, geodesic_distance, snap_to_navmesh

__all__ = [
    "FORWARD_STEP",
    "SUCCESS_RADIUS",
    "TURN_ANGLE",
    "Action",
    "DistanceField",
    "EnvState",
    "EpisodeParams",
    "NavQuery",
    "SimBatch",
    "StepResult",
    "Task",
    "WorkerPool",
    "begin_episode",
    "forward_vector",
    "geodesic_distance",
    "make_envs",
    "reset_episode",
    "simulate_batch",
    "snap_to_navmesh",
    "spl",
    "step_agent",
    "success_rate",
    "task_step",
]
