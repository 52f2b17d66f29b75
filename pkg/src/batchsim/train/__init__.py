"""Large-batch PPO with the Lamb optimizer."""

from .lamb import Lamb, LambHyper, LambStats, OptimizerState, clip_grad_norm, lamb_step, lamb_update, trust_ratio
from .ppo import (
    DEPTH_BASE_LR,
    RGB_BASE_LR,
    RolloutBuffer,
    TrainConfig,
    env_minibatches,
    gae,
    lr_schedule,
    ppo_loss,
    scale_lr,
    train_iteration,
)

__all__ = [
    "DEPTH_BASE_LR",
    "RGB_BASE_LR",
    "Lamb",
    "LambHyper",
    "LambStats",
    "OptimizerState",
    "RolloutBuffer",
    "TrainConfig",
    "clip_grad_norm",
    "env_minibatches",
    "gae",
    "lamb_step",
    "lamb_update",
    "lr_schedule",
    "ppo_loss",
    "scale_lr",
    "train_iteration",
    "trust_ratio",
]
