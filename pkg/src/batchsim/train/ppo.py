"""Advantage estimation, the clipped PPO objective and one training iteration."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ..errors import InvalidSpecError, ShapeError, TrainingFault
from ..nn import tensor as T
from ..nn.policy import Policy
from ..nn.tensor import Tensor
from .lamb import Lamb, LambHyper, clip_grad_norm

DEPTH_BASE_LR = 5e-4
RGB_BASE_LR = 2.5e-4


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    ppo_clip: float = 0.2
    epochs: int = 1
    minibatches: int = 2
    base_lr: Optional[float] = None  # None picks the sensor default
    batch_base: int = 256
    weight_decay: float = 1e-2
    lamb_rho: float = 1e-2
    phi_cap: float = 10.0
    max_grad_norm: float = 1.0
    value_loss_coef: float = 0.5
    entropy_coef: float = 0.01
    normalize_advantages: bool = False
    micro_envs: int = 8  # envs per forward/backward chunk; bounds activation memory

    def validate(self, num_envs: Optional[int] = None) -> list[str]:
        problems = []
        if not 0.0 < self.gamma <= 1.0:
            problems.append(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            problems.append(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if self.ppo_clip <= 0:
            problems.append("ppo_clip must be positive")
        if self.epochs < 1 or self.minibatches < 1 or self.micro_envs < 1:
            problems.append("epochs, minibatches and micro_envs must be at least 1")
        if num_envs is not None and num_envs % self.minibatches:
            problems.append(f"minibatches ({self.minibatches}) must divide the number of envs ({num_envs})")
        if not 0.0 < self.lamb_rho <= 1.0:
            problems.append("lamb_rho must lie in (0, 1]")
        if self.base_lr is not None and self.base_lr <= 0:
            problems.append("base_lr must be positive")
        return problems

    def check(self, num_envs: Optional[int] = None) -> None:
        problems = self.validate(num_envs)
        if problems:
            raise InvalidSpecError("; ".join(problems))

    def lamb_hyper(self) -> LambHyper:
        return LambHyper(weight_decay=self.weight_decay, rho=self.lamb_rho, phi_cap=self.phi_cap)

    def resolved_base_lr(self, sensor: str = "depth") -> float:
        if self.base_lr is not None:
            return self.base_lr
        return RGB_BASE_LR if sensor == "rgb" else DEPTH_BASE_LR

    def to_dict(self) -> dict:
        return asdict(self)


def gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, gamma: float = 0.99,
        lam: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates for ``(N, L)`` rewards with ``(N, L + 1)`` values.

    ``dones[:, t]`` marks that the transition at ``t`` ended its episode, which
    cuts both the bootstrap and the advantage recursion there.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if rewards.ndim != 2 or values.shape != (rewards.shape[0], rewards.shape[1] + 1) or dones.shape != rewards.shape:
        raise ShapeError(f"gae shapes: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}")
    n, length = rewards.shape
    notdone = 1.0 - dones
    delta = rewards + gamma * values[:, 1:] * notdone - values[:, :-1]
    adv = np.empty_like(rewards)
    running = np.zeros(n)
    for t in range(length - 1, -1, -1):
        running = delta[:, t] + gamma * lam * notdone[:, t] * running
        adv[:, t] = running
    return adv, adv + values[:, :-1]


def ppo_loss(logits: Tensor, values: Tensor, actions: np.ndarray, old_logp: np.ndarray, advantages: np.ndarray,
             returns: np.ndarray, clip: float = 0.2, value_coef: float = 0.5,
             entropy_coef: float = 0.01) -> tuple[Tensor, dict]:
    """Clipped surrogate + unclipped value MSE - entropy bonus, averaged over rows."""
    for name, arr in (("old_logp", old_logp), ("advantages", advantages), ("returns", returns)):
        if not np.all(np.isfinite(arr)):
            raise TrainingFault(f"non-finite {name} in PPO inputs")
    if not (np.all(np.isfinite(logits.data)) and np.all(np.isfinite(values.data))):
        raise TrainingFault("non-finite policy outputs")
    dt = logits.dtype
    rows = np.arange(len(actions))
    logp_all = T.log_softmax(logits, axis=-1)
    logp = logp_all[rows, np.asarray(actions, dtype=np.int64)]
    ratio = T.exp(logp - Tensor(np.asarray(old_logp, dtype=dt)))
    adv = Tensor(np.asarray(advantages, dtype=dt))
    surr = T.minimum(ratio * adv, T.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)
    policy_loss = -surr.mean()
    err = values - Tensor(np.asarray(returns, dtype=dt))
    value_loss = (err * err).mean()
    entropy = -(T.exp(logp_all) * logp_all).sum(axis=-1).mean()
    loss = policy_loss + value_coef * value_loss - entropy_coef * entropy
    with np.errstate(invalid="ignore"):
        clipped = float(np.mean(np.abs(ratio.data - 1.0) > clip))
    stats = {
        "policy_loss": float(policy_loss.data),
        "value_loss": float(value_loss.data),
        "entropy": float(entropy.data),
        "clip_fraction": clipped,
    }
    return loss, stats


def scale_lr(base_lr: float, batch: int, batch_base: int = 256) -> float:
    """Square-root batch scaling, in effect from the first update."""
    if batch <= 0:
        raise InvalidSpecError("batch size must be positive")
    return base_lr * math.sqrt(batch / batch_base)


def lr_schedule(scaled_lr: float, base_lr: float, progress: float) -> float:
    """Cosine decay from ``scaled_lr`` to ``base_lr`` over the first half of training."""
    if scaled_lr < base_lr:
        raise InvalidSpecError("scaled_lr must be at least base_lr")
    u = min(max(progress, 0.0) / 0.5, 1.0)
    return base_lr + (scaled_lr - base_lr) * (1.0 + math.cos(math.pi * u)) / 2.0


@dataclass
class RolloutBuffer:
    """``L`` steps of ``N`` environments, stored time-major."""

    obs: np.ndarray  # (L, N, C, H, W) float32
    compass: np.ndarray  # (L, N, 2)
    actions: np.ndarray  # (L, N) int
    logp: np.ndarray  # (L, N)
    values: np.ndarray  # (L + 1, N); last row bootstraps
    rewards: np.ndarray  # (L, N)
    dones: np.ndarray  # (L, N) transition ended its episode
    resets: np.ndarray  # (L, N) recurrent state zeroed before this step
    state0: tuple[np.ndarray, np.ndarray]  # (N, hidden) each

    @classmethod
    def empty(cls, length: int, n: int, obs_shape: tuple, hidden: int) -> "RolloutBuffer":
        z = np.zeros((n, hidden), np.float32)
        return cls(
            obs=np.zeros((length, n) + tuple(obs_shape), np.float32),
            compass=np.zeros((length, n, 2)),
            actions=np.zeros((length, n), np.int64),
            logp=np.zeros((length, n)),
            values=np.zeros((length + 1, n)),
            rewards=np.zeros((length, n)),
            dones=np.zeros((length, n), bool),
            resets=np.zeros((length, n), bool),
            state0=(z, z.copy()),
        )

    @property
    def length(self) -> int:
        return self.rewards.shape[0]

    @property
    def num_envs(self) -> int:
        return self.rewards.shape[1]

    @property
    def size(self) -> int:
        return self.length * self.num_envs

    def advantages(self, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
        """(advantages, returns), both ``(L, N)``."""
        adv, ret = gae(self.rewards.T, self.values.T, self.dones.T, gamma, lam)
        return adv.T, ret.T


def env_minibatches(num_envs: int, minibatches: int) -> list[np.ndarray]:
    """Split env indices into contiguous groups; each env's whole sequence stays together."""
    return np.array_split(np.arange(num_envs), minibatches)


def train_iteration(policy: Policy, optimizer: Lamb, buffer: RolloutBuffer, config: TrainConfig,
                    lr: float) -> dict:
    """One PPO pass over ``buffer`` with Lamb updates; returns averaged loss statistics."""
    config.check(buffer.num_envs)
    adv, ret = buffer.advantages(config.gamma, config.gae_lambda)
    if not (np.all(np.isfinite(adv)) and np.all(np.isfinite(ret))):
        raise TrainingFault("non-finite advantages")
    totals: dict[str, float] = {}
    updates = 0
    for _ in range(config.epochs):
        for envs in env_minibatches(buffer.num_envs, config.minibatches):
            mb_adv = adv[:, envs]
            if config.normalize_advantages:
                mb_adv = (mb_adv - mb_adv.mean()) / (mb_adv.std() + 1e-8)
            optimizer.zero_grad()
            stats_mb: dict[str, float] = {}
            for chunk in np.array_split(envs, max(1, -(-len(envs) // config.micro_envs))):
                cols = np.searchsorted(envs, chunk)
                weight = len(chunk) / len(envs)
                out = policy(buffer.obs[:, chunk], buffer.compass[:, chunk],
                             (buffer.state0[0][chunk], buffer.state0[1][chunk]), buffer.resets[:, chunk])
                loss, st = ppo_loss(out.logits, out.value, buffer.actions[:, chunk].reshape(-1),
                                    buffer.logp[:, chunk].reshape(-1), mb_adv[:, cols].reshape(-1),
                                    ret[:, chunk].reshape(-1), config.ppo_clip, config.value_loss_coef,
                                    config.entropy_coef)
                (loss * weight).backward()
                st["loss"] = float(loss.data)
                for k, v in st.items():
                    stats_mb[k] = stats_mb.get(k, 0.0) + weight * v
            stats_mb["grad_norm"] = clip_grad_norm(optimizer.params, config.max_grad_norm)
            lamb_stats = optimizer.step(lr)
            stats_mb["trust_ratio"] = lamb_stats.mean_trust_ratio
            stats_mb["rho_clipped"] = lamb_stats.rho_clipped
            for k, v in stats_mb.items():
                totals[k] = totals.get(k, 0.0) + v
            updates += 1
    out = {k: v / updates for k, v in totals.items()}
    out["lr"] = lr
    out["updates"] = updates
    return out
