"""Render a batch of agent views in one generated maze and save the megaframe.

Writes ``views_depth.pgm`` and ``views_color.ppm`` to the output directory
(default: the current directory).

    python3 demos/render_views.py [out_dir]
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from batchsim.navsim import EnvState, reset_episode
from batchsim.render import CameraView, RenderConfig, render_batch, write_pgm, write_ppm
from batchsim.scene import generate_scene


def main(out_dir: str = ".") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    asset = generate_scene(seed=7)

    views = []
    for k in range(16):
        env = EnvState(navmesh=asset.navmesh, rng=np.random.default_rng(k))
        reset_episode(env)
        views.append(CameraView.from_agent(env.position, env.heading, asset))

    frame = render_batch(views, RenderConfig(resolution=96, color=True))
    write_pgm(out / "views_depth.pgm", frame)
    write_ppm(out / "views_color.ppm", frame)
    print(f"{len(views)} views, megaframe {frame.depth.shape}, depth range "
          f"[{frame.depth.min():.2f}, {frame.depth.max():.2f}] m -> {out.resolve()}")


if __name__ == "__main__":
    main(*sys.argv[1:2])
