"""Renderer throughput benchmark and megaframe image dumps."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import InvalidInputError
from ..scene.asset import SceneAsset
from .batch import BatchRenderer, CameraView, Megaframe, RenderConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchRow:
    batch_size: int
    resolution: int
    frames: int
    seconds: float

    @property
    def fps(self) -> float:
        return self.frames / self.seconds if self.seconds > 0 else math.inf


def camera_trace(asset: SceneAsset, length: int, seed: int = 0) -> list[tuple[np.ndarray, float]]:
    """A random walk of (floor position, heading) pairs on the asset's navmesh."""
    from ..navsim.agent import EnvState, Task, reset_episode, step_agent

    env = EnvState(navmesh=asset.navmesh, rng=np.random.default_rng(seed), task=Task.EXPLORE)
    reset_episode(env)
    rng = np.random.default_rng(seed + 1)
    trace = []
    for _ in range(length):
        trace.append((env.position.copy(), env.heading))
        step_agent(env, int(rng.choice(3, p=[0.6, 0.2, 0.2])))
    return trace


def render_bench(asset: SceneAsset, trace: Sequence[tuple[np.ndarray, float]], batch_sizes: Sequence[int] = (1, 4, 16, 64, 256),
                 resolutions: Sequence[int] = (64,), min_frames: int = 1000, warmup_frames: int = 64,
                 config: Optional[RenderConfig] = None) -> list[BenchRow]:
    """Frames per second for every (batch size, resolution) pair.

    Consecutive trace poses fill each batch, wrapping around the trace. Every
    row is measured over at least ``min_frames`` frames after ``warmup_frames``
    untimed ones. A resolution of 128 or more renders at twice the size and
    box-downsamples, the way the agent-facing 128 mode does. Without an
    explicit ``config`` the raster stage gets one worker per core, which only
    batches larger than one can use.
    """
    if len(trace) == 0:
        raise InvalidInputError("camera trace is empty")
    if config is None:
        from ..navsim.batch import default_workers

        config = RenderConfig(workers=default_workers())
    views = [CameraView.from_agent(p, h, asset) for p, h in trace]
    rows = []
    for res in resolutions:
        ss = 2 if res >= 128 else 1
        cfg = RenderConfig(resolution=res, supersample=ss, color=config.color, culling=config.culling,
                           pipelined=config.pipelined, chunk=config.chunk, workers=config.workers)
        renderer = BatchRenderer(cfg)
        try:
            for n in batch_sizes:
                frame = None if ss == 2 else Megaframe(n, res, res, color=cfg.color)
                cursor = 0

                def next_batch() -> list[CameraView]:
                    nonlocal cursor
                    batch = [views[(cursor + k) % len(views)] for k in range(n)]
                    cursor = (cursor + n) % len(views)
                    return batch

                done = 0
                while done < warmup_frames:
                    renderer.render(next_batch(), out=frame)
                    done += n
                batches = [next_batch() for _ in range(-(-min_frames // n))]
                t0 = time.perf_counter()
                for b in batches:
                    renderer.render(b, out=frame)
                dt = time.perf_counter() - t0
                row = BenchRow(n, res, n * len(batches), dt)
                log.info("render bench N=%d res=%d: %.0f fps", n, res, row.fps)
                rows.append(row)
        finally:
            renderer.close()
    return rows


def format_table(rows: Sequence[BenchRow]) -> str:
    lines = [f"{'batch':>6} {'res':>5} {'frames':>7} {'fps':>10}"]
    for r in rows:
        lines.append(f"{r.batch_size:>6} {r.resolution:>5} {r.frames:>7} {r.fps:>10.1f}")
    return "\n".join(lines)


def write_pgm(path, frame: Megaframe) -> None:
    """Depth plane as an 8-bit binary PGM (near is white, far is black)."""
    d = np.clip(frame.depth / frame.far, 0.0, 1.0)
    img = np.round(255.0 * (1.0 - d)).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def write_ppm(path, frame: Megaframe) -> None:
    """Color plane as an 8-bit binary PPM."""
    if frame.color is None:
        raise ValueError("megaframe has no color plane")
    img = np.round(255.0 * np.clip(frame.color, 0.0, 1.0)).astype(np.uint8)
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + img.tobytes())
