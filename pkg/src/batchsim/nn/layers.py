"""Parameterized layers: linear, convolution, squeeze-excite, Fixup residual block, LSTM."""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from ..errors import InvalidSpecError
from . import tensor as T
from .functional import conv2d
from .tensor import Tensor

DEFAULT = "default"
NO_TRUST = "no_trust"


class Parameter(Tensor):
    """A trainable leaf tensor with an optimizer group tag."""

    __slots__ = ("group",)

    def __init__(self, data, group: str = DEFAULT, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)
        self.group = group


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unknown = set(state) - set(params)
        if missing or unknown:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unknown)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)


def _he(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, dtype=np.float32,
                 gain: float = math.sqrt(2.0)):
        bound = gain * math.sqrt(3.0 / fan_in)
        self.weight = Parameter(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype))
        self.bias = Parameter(np.zeros(fan_out, dtype), group=NO_TRUST)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class Conv2d(Module):
    """Convolution over channel-major ``(C, N, H, W)`` activations."""

    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator, stride: int = 1,
                 padding: int = 0, bias: bool = True, dtype=np.float32):
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(_he(rng, (cout, cin, kernel, kernel), cin * kernel * kernel, dtype))
        self.bias = Parameter(np.zeros((cout, 1, 1, 1), dtype), group=NO_TRUST) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = conv2d(x, self.weight, self.stride, self.padding)
        return y + self.bias if self.bias is not None else y


class SqueezeExcite(Module):
    """Channel gate: global average, C -> C/r -> C, sigmoid, multiply."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 16, dtype=np.float32):
        if channels % reduction:
            raise InvalidSpecError(f"SE reduction {reduction} does not divide {channels} channels")
        self.fc1 = Linear(channels, channels // reduction, rng, dtype)
        self.fc2 = Linear(channels // reduction, channels, rng, dtype, gain=1.0)

    def gate(self, x: Tensor) -> Tensor:
        C, N = x.shape[:2]
        squeezed = x.mean(axis=(2, 3)).T  # (N, C)
        g = T.sigmoid(self.fc2(T.relu(self.fc1(squeezed))))
        return g.T.reshape(C, N, 1, 1)

    def __call__(self, x: Tensor) -> Tensor:
        return x * self.gate(x)


class FixupBlock(Module):
    """Two-conv residual block with squeeze-excite and no normalization.

    branch(x) = scale * SE(conv2(relu(conv1(x + b1a) + b1b) + b2a)) + b2b
    out = shortcut(x) + branch(x)

    ``scale`` starts at zero, so a fresh block returns its shortcut exactly;
    ``conv1`` is scaled by ``num_blocks ** -0.5`` (two layers per branch).
    There is no activation after the addition, which keeps that identity exact.
    """

    def __init__(self, cin: int, cout: int, stride: int, num_blocks: int, rng: np.random.Generator,
                 reduction: int = 16, dtype=np.float32):
        self.conv1 = Conv2d(cin, cout, 3, rng, stride=stride, padding=1, bias=False, dtype=dtype)
        self.conv1.weight.data *= np.asarray(num_blocks ** -0.5, dtype=dtype)
        self.conv2 = Conv2d(cout, cout, 3, rng, stride=1, padding=1, bias=False, dtype=dtype)
        self.se = SqueezeExcite(cout, rng, reduction, dtype)
        self.bias1a = Parameter(np.zeros((1, 1, 1, 1), dtype), group=NO_TRUST)
        self.bias1b = Parameter(np.zeros((1, 1, 1, 1), dtype), group=NO_TRUST)
        self.bias2a = Parameter(np.zeros((1, 1, 1, 1), dtype), group=NO_TRUST)
        self.bias2b = Parameter(np.zeros((1, 1, 1, 1), dtype), group=NO_TRUST)
        self.scale = Parameter(np.zeros((1, 1, 1, 1), dtype), group=NO_TRUST)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = Conv2d(cin, cout, 1, rng, stride=stride, bias=True, dtype=dtype)

    def branch(self, x: Tensor) -> Tensor:
        h = self.conv1(x + self.bias1a)
        h = self.conv2(T.relu(h + self.bias1b) + self.bias2a)
        return self.se(h) * self.scale + self.bias2b

    def skip(self, x: Tensor) -> Tensor:
        return x if self.shortcut is None else self.shortcut(x)

    def __call__(self, x: Tensor, ablate: bool = False) -> Tensor:
        if ablate:
            return self.skip(x)
        return self.skip(x) + self.branch(x)


class LSTMCell(Module):
    """Single-layer LSTM; gate order in the fused weights is (input, forget, cell, output)."""

    def __init__(self, fan_in: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.hidden = hidden
        bound = 1.0 / math.sqrt(hidden)
        self.w_x = Parameter(rng.uniform(-bound, bound, (fan_in, 4 * hidden)).astype(dtype))
        self.w_h = Parameter(rng.uniform(-bound, bound, (hidden, 4 * hidden)).astype(dtype))
        self.bias = Parameter(np.zeros(4 * hidden, dtype), group=NO_TRUST)

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        z = x @ self.w_x + h @ self.w_h + self.bias
        H = self.hidden
        i = T.sigmoid(z[:, 0:H])
        f = T.sigmoid(z[:, H:2 * H])
        g = T.tanh(z[:, 2 * H:3 * H])
        o = T.sigmoid(z[:, 3 * H:4 * H])
        c_next = f * c + i * g
        h_next = o * T.tanh(c_next)
        return h_next, c_next
