"""Recurrent actor-critic policy with a SpaceToDepth stem and Fixup SE residual stages."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import InvalidSpecError, ShapeError
from . import tensor as T
from .functional import space_to_depth
from .layers import Conv2d, FixupBlock, Linear, LSTMCell, Module
from .tensor import Tensor


@dataclass(frozen=True)
class PolicyConfig:
    resolution: int = 64
    channels: int = 1  # 1 for depth, 3 for RGB
    stem_block: int = 2
    stages: tuple = (32, 64, 128, 256)
    se_reduction: int = 16
    embed: int = 256
    hidden: int = 128
    num_actions: int = 4

    def validate(self) -> None:
        problems = []
        if self.hidden <= 0:
            problems.append("hidden size must be positive")
        if self.channels not in (1, 3):
            problems.append("channels must be 1 (depth) or 3 (rgb)")
        for c in self.stages:
            if c % self.se_reduction:
                problems.append(f"SE reduction {self.se_reduction} does not divide stage width {c}")
        if not self.stages:
            problems.append("need at least one residual stage")
        down = self.stem_block * 2 ** max(len(self.stages) - 1, 0)
        if self.resolution % down:
            problems.append(f"resolution {self.resolution} not divisible by total downsampling {down}")
        if problems:
            raise InvalidSpecError("; ".join(problems))

    @property
    def feature_size(self) -> int:
        side = self.resolution // (self.stem_block * 2 ** (len(self.stages) - 1))
        return self.stages[-1] * side * side

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = list(self.stages)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        d = dict(d)
        if "stages" in d:
            d["stages"] = tuple(d["stages"])
        return cls(**d)


@dataclass
class PolicyOutput:
    logits: Tensor  # (rows, num_actions)
    value: Tensor  # (rows,)
    state: tuple[np.ndarray, np.ndarray] = field(repr=False)


def encode_compass(compass: np.ndarray) -> np.ndarray:
    """(distance, bearing) -> (distance, cos bearing, sin bearing)."""
    compass = np.asarray(compass)
    return np.stack([compass[..., 0], np.cos(compass[..., 1]), np.sin(compass[..., 1])], axis=-1)


class Policy(Module):
    def __init__(self, config: PolicyConfig = PolicyConfig(), seed: int = 0, dtype=np.float32):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        c0 = config.channels * config.stem_block ** 2
        self.stem = Conv2d(c0, config.stages[0], 3, rng, padding=1, dtype=dtype)
        blocks = []
        cin = config.stages[0]
        for k, cout in enumerate(config.stages):
            blocks.append(FixupBlock(cin, cout, 1 if k == 0 else 2, len(config.stages), rng,
                                     config.se_reduction, dtype))
            cin = cout
        self.blocks = blocks
        self.fc = Linear(config.feature_size, config.embed, rng, dtype)
        self.lstm = LSTMCell(config.embed + 3, config.hidden, rng, dtype)
        self.actor = Linear(config.hidden, config.num_actions, rng, dtype, gain=0.01)
        self.critic = Linear(config.hidden, 1, rng, dtype, gain=1.0)

    @property
    def dtype(self):
        return self.fc.weight.dtype

    def initial_state(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        z = np.zeros((n, self.config.hidden), dtype=self.dtype)
        return z, z.copy()

    def encode(self, obs: np.ndarray, ablate: bool = False) -> Tensor:
        """Visual embedding of a batch of ``(rows, C, H, W)`` observations."""
        cfg = self.config
        if obs.ndim != 4 or obs.shape[1:] != (cfg.channels, cfg.resolution, cfg.resolution):
            raise ShapeError(f"observation batch {obs.shape} does not match "
                             f"(rows, {cfg.channels}, {cfg.resolution}, {cfg.resolution})")
        x = space_to_depth(Tensor(np.asarray(obs, dtype=self.dtype)), cfg.stem_block)
        x = T.relu(self.stem(x.transpose(1, 0, 2, 3)))
        for block in self.blocks:
            x = block(x, ablate=ablate)
        x = T.relu(x)
        x = x.transpose(1, 0, 2, 3)
        x = x.reshape(x.shape[0], -1)
        return T.relu(self.fc(x))

    def forward(self, obs: np.ndarray, compass: np.ndarray, state: tuple[np.ndarray, np.ndarray],
                reset: Optional[np.ndarray] = None, ablate: bool = False) -> PolicyOutput:
        """Unroll the policy over ``T`` steps of ``N`` environments.

        ``obs`` is ``(T, N, C, H, W)`` (or ``(N, C, H, W)`` for one step), ``compass``
        is ``(T, N, 2)`` of (distance, bearing), ``reset`` is ``(T, N)``; a nonzero
        ``reset[t, n]`` zeroes env ``n``'s recurrent state before step ``t``.
        Outputs are flattened time-major: row ``t * N + n``.
        """
        obs = np.asarray(obs)
        compass = np.asarray(compass)
        if obs.ndim == 4:
            obs, compass = obs[None], compass[None]
            reset = None if reset is None else np.asarray(reset)[None]
        steps, n = obs.shape[:2]
        if compass.shape != (steps, n, 2):
            raise ShapeError(f"compass shape {compass.shape} != {(steps, n, 2)}")
        h0, c0 = state
        if h0.shape != (n, self.config.hidden) or c0.shape != h0.shape:
            raise ShapeError(f"recurrent state shape {h0.shape} != {(n, self.config.hidden)}")
        if reset is None:
            reset = np.zeros((steps, n))
        keep = (1.0 - np.asarray(reset, dtype=self.dtype))[..., None]

        feats = self.encode(obs.reshape((steps * n,) + obs.shape[2:]), ablate=ablate)
        comp = Tensor(encode_compass(compass).astype(self.dtype).reshape(steps * n, 3))
        x = T.concat([feats, comp], axis=1)
        h, c = Tensor(h0), Tensor(c0)
        hs = []
        for t in range(steps):
            h = h * keep[t]
            c = c * keep[t]
            h, c = self.lstm(x[t * n:(t + 1) * n], h, c)
            hs.append(h)
        out = T.concat(hs, axis=0) if steps > 1 else hs[0]
        logits = self.actor(out)
        value = self.critic(out).reshape(-1)
        return PolicyOutput(logits, value, (h.data.copy(), c.data.copy()))

    __call__ = forward
