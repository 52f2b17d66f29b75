"""The batch loop, training runs, evaluation and scene sets."""

from .evaluate import EpisodeSpec, OracleAgent, PolicyAgent, RandomAgent, episode_set, evaluate
from .runner import BatchConfig, BatchRunner, StageTimings, compass_of, observe, sample_actions
from .scenes import Rotation, SceneLibrary, generated_split, scene_seeds, split_ids, write_scene_set
from .training import (
    MetricsWriter,
    TrainRun,
    fps_benchmark,
    latest_checkpoint,
    load_policy,
    save_checkpoint,
    train_run,
)

__all__ = [
    "BatchConfig",
    "BatchRunner",
    "EpisodeSpec",
    "MetricsWriter",
    "OracleAgent",
    "PolicyAgent",
    "RandomAgent",
    "Rotation",
    "SceneLibrary",
    "StageTimings",
    "TrainRun",
    "compass_of",
    "episode_set",
    "evaluate",
    "fps_benchmark",
    "generated_split",
    "latest_checkpoint",
    "load_policy",
    "observe",
    "sample_actions",
    "save_checkpoint",
    "scene_seeds",
    "split_ids",
    "train_run",
    "write_scene_set",
]
