"""Lamb: Adam directions rescaled per tensor by a clipped trust ratio.

For each parameter tensor ``theta`` with Adam direction ``s``::

    u = s + wd * theta
    r = clip(min(|theta|, phi_cap) / |u|, rho, 1 / rho)
    theta <- theta - lr * r * u

Tensors in the ``no_trust`` group use ``rho = 1`` (so ``r = 1``) and no weight
decay, which makes their update a plain Adam step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import TrainingFault
from ..nn.layers import NO_TRUST, Parameter


@dataclass(frozen=True)
class LambHyper:
    weight_decay: float = 1e-2
    rho: float = 1e-2
    phi_cap: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class LambStats:
    trust_ratios: list[float] = field(default_factory=list)
    phi_capped: int = 0  # tensors whose norm exceeded phi_cap
    rho_clipped: int = 0  # tensors whose raw ratio fell outside [rho, 1/rho]

    @property
    def mean_trust_ratio(self) -> float:
        return float(np.mean(self.trust_ratios)) if self.trust_ratios else 1.0


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "OptimizerState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def trust_ratio(theta_norm: float, u_norm: float, rho: float, phi_cap: float) -> tuple[float, bool, bool]:
    """(r, phi cap active, rho clip active); ``u_norm == 0`` gives ``r = 1``."""
    capped = theta_norm > phi_cap
    if u_norm == 0.0:
        return 1.0, capped, False
    raw = min(theta_norm, phi_cap) / u_norm
    r = min(max(raw, rho), 1.0 / rho)
    return r, capped, r != raw


def lamb_update(theta: np.ndarray, s: np.ndarray, lr: float, hyper: LambHyper = LambHyper(),
                no_trust: bool = False) -> tuple[np.ndarray, float, bool, bool]:
    """Apply one update along Adam direction ``s``; returns (theta', r, phi capped, rho clipped)."""
    if no_trust:
        return (theta - lr * s).astype(theta.dtype, copy=False), 1.0, False, False
    u = s + hyper.weight_decay * theta
    theta_norm = math.sqrt(float(np.sum(np.square(theta, dtype=np.float64))))
    u_norm = math.sqrt(float(np.sum(np.square(u, dtype=np.float64))))
    r, capped, clipped = trust_ratio(theta_norm, u_norm, hyper.rho, hyper.phi_cap)
    return (theta - (lr * r) * u).astype(theta.dtype, copy=False), r, capped, clipped


def lamb_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState, lr: float,
              hyper: LambHyper = LambHyper(), no_trust: Optional[Sequence[bool]] = None,
              stats: Optional[LambStats] = None) -> list[np.ndarray]:
    """Return updated copies of ``params``; ``state`` is advanced in place."""
    if no_trust is None:
        no_trust = [False] * len(params)
    state.step += 1
    t = state.step
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    out = []
    for k, (theta, g) in enumerate(zip(params, grads)):
        if not np.all(np.isfinite(g)):
            raise TrainingFault(f"non-finite gradient in parameter tensor {k}")
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        s = (m / c1) / (np.sqrt(v / c2) + hyper.eps)
        new, r, capped, clipped = lamb_update(theta, s, lr, hyper, no_trust[k])
        if stats is not None and not no_trust[k]:
            stats.trust_ratios.append(r)
            stats.phi_capped += capped
            stats.rho_clipped += clipped
        out.append(new)
    return out


class Lamb:
    """Stateful optimizer over :class:`Parameter` objects, grouped by their tag."""

    def __init__(self, params: Sequence[Parameter], hyper: LambHyper = LambHyper()):
        self.params = list(params)
        self.hyper = hyper
        self.no_trust = [p.group == NO_TRUST for p in self.params]
        self.state = OptimizerState.zeros_like([p.data for p in self.params])
        self.last_stats = LambStats()

    def step(self, lr: float) -> LambStats:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        stats = LambStats()
        new = lamb_step([p.data for p in self.params], grads, self.state, lr, self.hyper, self.no_trust, stats)
        for p, d in zip(self.params, new):
            p.data = d
        self.last_stats = stats
        return stats

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {"step": np.array([self.state.step], dtype=np.float32)}
        for k, (m, v) in enumerate(zip(self.state.m, self.state.v)):
            out[f"m.{k}"] = m
            out[f"v.{k}"] = v
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        self.state.step = int(tensors["step"][0])
        for k, p in enumerate(self.params):
            self.state.m[k] = np.array(tensors[f"m.{k}"], dtype=p.dtype)
            self.state.v[k] = np.array(tensors[f"v.{k}"], dtype=p.dtype)


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``; return the norm before."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    norm = math.sqrt(total)
    if not math.isfinite(norm):
        raise TrainingFault("non-finite gradient norm")
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= np.asarray(scale, dtype=p.grad.dtype)
    return norm
