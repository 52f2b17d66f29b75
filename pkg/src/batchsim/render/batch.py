"""Batch renderer: N camera views drawn as tiles of one megaframe.

Views are processed in chunks through a two-stage pipeline: a culling thread
produces the visible-triangle lists of chunk ``k + 1`` while raster workers
draw chunk ``k``. Each view's tile and each view's slice of the visible-list
buffer are written by exactly one task, so the result does not depend on the
schedule, the chunk size or the number of workers.
"""

from __future__ import annotations

import math
import queue
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from ..errors import AssetFaultError, InvalidInputError
from ..scene.asset import SceneAsset
from ..scene.store import AssetHandle, AssetStore
from . import kernels

DEFAULT_FOV = 90.0
DEFAULT_NEAR = 0.01
DEFAULT_FAR = 20.0
CAMERA_HEIGHT = 1.25


@dataclass
class CameraView:
    position: np.ndarray
    heading: float
    asset: Union[SceneAsset, AssetHandle]
    fov_deg: float = DEFAULT_FOV
    near: float = DEFAULT_NEAR
    far: float = DEFAULT_FAR

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        if not 0.0 < self.near < self.far:
            raise InvalidInputError(f"need 0 < near < far, got near={self.near}, far={self.far}")
        if not 0.0 < self.fov_deg < 180.0:
            raise InvalidInputError(f"fov must lie in (0, 180), got {self.fov_deg}")

    @property
    def scene(self) -> SceneAsset:
        return self.asset.asset if isinstance(self.asset, AssetHandle) else self.asset

    @classmethod
    def from_agent(cls, position, heading, asset, height: float = CAMERA_HEIGHT, **kw) -> "CameraView":
        eye = np.asarray(position, dtype=np.float64) + np.array([0.0, height, 0.0])
        return cls(eye, heading, asset, **kw)


@dataclass(frozen=True)
class RenderConfig:
    resolution: int = 64
    supersample: int = 1
    color: bool = False
    depth: bool = True
    culling: bool = True
    pipelined: bool = True
    chunk: int = 32
    workers: int = 1
    clear_color: tuple = (0.0, 0.0, 0.0)

    def validate(self) -> None:
        if self.resolution < 1 or self.supersample not in (1, 2) or self.chunk < 1 or self.workers < 1:
            raise InvalidInputError(f"invalid render config {self}")

    @property
    def internal_resolution(self) -> int:
        return self.resolution * self.supersample


@dataclass(frozen=True)
class CullStats:
    triangles_in: int
    triangles_kept: int
    triangles_culled: int

    def __post_init__(self):
        assert self.triangles_kept + self.triangles_culled == self.triangles_in


class Megaframe:
    """Framebuffer holding ``n`` tiles in a row-major grid of ``ceil(sqrt(n))`` columns."""

    def __init__(self, n: int, height: int, width: int, color: bool = False, near: float = DEFAULT_NEAR,
                 far: float = DEFAULT_FAR, fill: float = DEFAULT_FAR):
        if n < 1:
            raise InvalidInputError("megaframe needs at least one tile")
        self.n = n
        self.tile_h, self.tile_w = height, width
        self.cols = math.isqrt(n - 1) + 1
        self.rows = -(-n // self.cols)
        self.near, self.far = near, far
        self.depth = np.full((self.rows * height, self.cols * width), fill, dtype=np.float32)
        self.color = np.zeros((self.rows * height, self.cols * width, 3), dtype=np.float32) if color else None
        self.cull_stats: Optional[CullStats] = None
        self.per_view_kept: Optional[np.ndarray] = None

    def tile_origin(self, i: int) -> tuple[int, int]:
        """(y, x) of the top-left pixel of tile ``i``."""
        if not 0 <= i < self.n:
            raise IndexError(i)
        r, c = divmod(i, self.cols)
        return r * self.tile_h, c * self.tile_w

    def pixel_address(self, i: int, x: int, y: int) -> tuple[int, int]:
        y0, x0 = self.tile_origin(i)
        return y0 + y, x0 + x

    def tile_depth(self, i: int) -> np.ndarray:
        y0, x0 = self.tile_origin(i)
        return self.depth[y0:y0 + self.tile_h, x0:x0 + self.tile_w]

    def tile_color(self, i: int) -> np.ndarray:
        if self.color is None:
            raise ValueError("megaframe has no color plane")
        y0, x0 = self.tile_origin(i)
        return self.color[y0:y0 + self.tile_h, x0:x0 + self.tile_w]

    def depth_tiles(self, normalize: bool = True) -> np.ndarray:
        """(n, H, W) stack of depth tiles, divided by ``far`` when ``normalize``."""
        g = self.depth[: self.rows * self.tile_h].reshape(self.rows, self.tile_h, self.cols, self.tile_w)
        tiles = g.transpose(0, 2, 1, 3).reshape(-1, self.tile_h, self.tile_w)[: self.n]
        return tiles / np.float32(self.far) if normalize else tiles.copy()

    def color_tiles(self) -> np.ndarray:
        """(n, H, W, 3) stack of color tiles."""
        if self.color is None:
            raise ValueError("megaframe has no color plane")
        g = self.color.reshape(self.rows, self.tile_h, self.cols, self.tile_w, 3)
        return g.transpose(0, 2, 1, 3, 4).reshape(-1, self.tile_h, self.tile_w, 3)[: self.n].copy()


class _Pack:
    """All triangles of a set of assets concatenated into flat arrays."""

    def __init__(self, assets: Sequence[SceneAsset]):
        self.offsets: dict[str, tuple[int, int]] = {}
        verts, tris, cols = [], [], []
        vo = to = 0
        for a in assets:
            verts.append(a.vertices)
            tris.append(a.triangles.astype(np.int64) + vo)
            cols.append(a.vertex_colors if a.vertex_colors is not None else np.full((len(a.vertices), 3), 0.5))
            self.offsets[a.id] = (to, to + len(a.triangles))
            vo += len(a.vertices)
            to += len(a.triangles)
        self.verts = np.ascontiguousarray(np.vstack(verts)) if verts else np.zeros((0, 3))
        self.tris = np.ascontiguousarray(np.vstack(tris)) if tris else np.zeros((0, 3), np.int64)
        self.colors = np.ascontiguousarray(np.vstack(cols)) if cols else np.zeros((0, 3))


def _camera_rows(views: Sequence[CameraView], aspect: float) -> np.ndarray:
    cams = np.empty((len(views), 9))
    for i, v in enumerate(views):
        fy = 1.0 / math.tan(math.radians(v.fov_deg) / 2.0)
        cams[i, 0:3] = v.position
        cams[i, 3] = math.sin(v.heading)
        cams[i, 4] = math.cos(v.heading)
        cams[i, 5] = fy / aspect
        cams[i, 6] = fy
        cams[i, 7] = v.near
        cams[i, 8] = v.far
    return cams


class BatchRenderer:
    """Renders batches of views; keeps a packed-geometry cache and worker threads."""

    def __init__(self, config: RenderConfig = RenderConfig(), store: Optional[AssetStore] = None,
                 cache_size: int = 4):
        config.validate()
        self.config = config
        self.store = store
        self._packs: OrderedDict[tuple, _Pack] = OrderedDict()
        self._cache_size = cache_size
        self._raster_pool = ThreadPoolExecutor(max_workers=config.workers, thread_name_prefix="raster")
        self._cull_pool = ThreadPoolExecutor(max_workers=1, thread_name_prefix="cull")
        self.calls = 0

    def close(self) -> None:
        self._raster_pool.shutdown(wait=True)
        self._cull_pool.shutdown(wait=True)

    def _pack_for(self, views: Sequence[CameraView]) -> _Pack:
        assets: dict[str, SceneAsset] = {}
        for i, v in enumerate(views):
            scene = v.scene
            if self.store is not None and not self.store.is_resident(scene.id):
                raise AssetFaultError(i, scene.id)
            assets.setdefault(scene.id, scene)
        key = tuple(sorted(assets))
        pack = self._packs.get(key)
        if pack is None:
            pack = _Pack([assets[k] for k in key])
            self._packs[key] = pack
            while len(self._packs) > self._cache_size:
                self._packs.popitem(last=False)
        else:
            self._packs.move_to_end(key)
        return pack

    def render(self, views: Sequence[CameraView], out: Optional[Megaframe] = None,
               tiles: Optional[Sequence[int]] = None) -> Megaframe:
        cfg = self.config
        n = len(views)
        if n == 0:
            raise InvalidInputError("render_batch needs at least one view")
        self.calls += 1
        pack = self._pack_for(views)
        res = cfg.internal_resolution
        tiles = np.arange(n) if tiles is None else np.asarray(tiles, dtype=np.int64)
        if len(tiles) != n:
            raise InvalidInputError("one tile index per view required")
        near = min(v.near for v in views)
        far = max(v.far for v in views)
        if cfg.supersample == 1 and out is not None:
            target = out
        else:
            target = Megaframe(max(n, int(tiles.max()) + 1), res, res, color=cfg.color, near=near, far=far)
        origins = np.array([target.tile_origin(int(t)) for t in tiles], dtype=np.int64).reshape(n, 2)

        cams = _camera_rows(views, 1.0)
        tri_start = np.array([pack.offsets[v.scene.id][0] for v in views], dtype=np.int64)
        tri_end = np.array([pack.offsets[v.scene.id][1] for v in views], dtype=np.int64)
        counts_max = tri_end - tri_start
        idx_start = np.concatenate([[0], np.cumsum(counts_max)[:-1]]).astype(np.int64)
        idx = np.empty(max(int(counts_max.sum()), 1), dtype=np.int64)
        idx_count = np.zeros(n, dtype=np.int64)
        color_buf = target.color if target.color is not None else np.zeros((1, 1, 3), np.float32)
        clear = np.asarray(cfg.clear_color, dtype=np.float32)

        def cull(lo: int, hi: int) -> None:
            if cfg.culling:
                kernels.cull_views(cams[lo:hi], tri_start[lo:hi], tri_end[lo:hi], pack.verts, pack.tris,
                                   idx, idx_start[lo:hi], idx_count[lo:hi])
            else:
                for v in range(lo, hi):
                    c = counts_max[v]
                    idx[idx_start[v]: idx_start[v] + c] = np.arange(tri_start[v], tri_end[v])
                    idx_count[v] = c

        def raster(lo: int, hi: int) -> None:
            kernels.raster_views(cams[lo:hi], origins[lo:hi, 1], origins[lo:hi, 0], res, res, idx,
                                 idx_start[lo:hi], idx_count[lo:hi], pack.verts, pack.tris, pack.colors,
                                 target.color is not None, target.depth, color_buf, clear)

        def raster_chunk(lo: int, hi: int) -> None:
            w = cfg.workers
            if w == 1 or hi - lo == 1:
                raster(lo, hi)
                return
            step = -(-(hi - lo) // w)
            futures = [self._raster_pool.submit(raster, s, min(s + step, hi)) for s in range(lo, hi, step)]
            for f in futures:
                f.result()

        chunks = [(s, min(s + cfg.chunk, n)) for s in range(0, n, cfg.chunk)]
        if cfg.pipelined and len(chunks) > 1:
            ready: "queue.Queue" = queue.Queue()

            def cull_stage():
                try:
                    for lo, hi in chunks:
                        cull(lo, hi)
                        ready.put((lo, hi))
                except BaseException as exc:
                    ready.put(exc)

            fut = self._cull_pool.submit(cull_stage)
            for _ in chunks:
                item = ready.get()
                if isinstance(item, BaseException):
                    raise item
                raster_chunk(*item)
            fut.result()
        else:
            for lo, hi in chunks:
                cull(lo, hi)
                raster_chunk(lo, hi)

        total_in = int(counts_max.sum())
        kept = int(idx_count.sum())
        stats = CullStats(total_in, kept, total_in - kept)

        if cfg.supersample == 2:
            final = out if out is not None else Megaframe(target.n, cfg.resolution, cfg.resolution,
                                                          color=cfg.color, near=near, far=far)
            for i, t in enumerate(tiles):
                t = int(t)
                kernels.downsample2(target.tile_depth(t), final.tile_depth(t))
                if cfg.color:
                    kernels.downsample2_rgb(target.tile_color(t), final.tile_color(t))
            target = final
        target.cull_stats = stats
        target.per_view_kept = idx_count.copy()
        return target


def cull_frustum(asset: SceneAsset, view: CameraView) -> tuple[np.ndarray, CullStats]:
    """Visible triangle indices of one view (conservative: only triangles wholly outside a plane go)."""
    cams = _camera_rows([view], 1.0)
    tris = asset.triangles.astype(np.int64)
    t = len(tris)
    idx = np.empty(max(t, 1), dtype=np.int64)
    count = np.zeros(1, dtype=np.int64)
    kernels.cull_views(cams, np.array([0]), np.array([t]), asset.vertices, tris, idx, np.array([0]), count)
    kept = int(count[0])
    return idx[:kept].copy(), CullStats(t, kept, t - kept)


_default_renderers: dict[RenderConfig, BatchRenderer] = {}
_default_lock = threading.Lock()


def render_batch(views: Sequence[CameraView], config: RenderConfig = RenderConfig(),
                 store: Optional[AssetStore] = None, out: Optional[Megaframe] = None,
                 tiles: Optional[Sequence[int]] = None) -> Megaframe:
    """Render ``views`` in one request; see :class:`BatchRenderer`."""
    if store is not None:
        renderer = BatchRenderer(config, store)
        try:
            return renderer.render(views, out=out, tiles=tiles)
        finally:
            renderer.close()
    with _default_lock:
        renderer = _default_renderers.get(config)
        if renderer is None:
            renderer = _default_renderers[config] = BatchRenderer(config)
    return renderer.render(views, out=out, tiles=tiles)
