"""Deterministic software batch renderer."""

from .batch import (
    CAMERA_HEIGHT,
    BatchRenderer,
    CameraView,
    CullStats,
    Megaframe,
    RenderConfig,
    cull_frustum,
    render_batch,
)
from .bench import BenchRow, camera_trace, format_table, render_bench, write_pgm, write_ppm

__all__ = [
    "BenchRow",
    "CAMERA_HEIGHT",
    "BatchRenderer",
    "CameraView",
    "CullStats",
    "Megaframe",
    "RenderConfig",
    "cull_frustum",
    "camera_trace",
    "format_table",
    "render_batch",
    "render_bench",
    "write_pgm",
    "write_ppm",
]
