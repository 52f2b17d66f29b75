"""Procedural maze-like indoor scenes.

A recursive backtracker carves a spanning tree over a grid of square cells, a
fraction of the remaining interior walls is knocked out to create loops, and
the open floor is decomposed into axis-aligned rectangles:

* one *core* per cell (cell minus the wall bands around it),
* one *passage* strip per removed interior wall,
* one *post* square per interior grid vertex whose four incident walls are all gone.

Outer walls occupy a band of ``wall_thickness`` inside the grid; interior walls
are centred on the cell boundary. Each rectangle contributes two navmesh
triangles. Because rectangles meet edge-to-edge the navmesh is conforming.

The render mesh is the navmesh floor, a ceiling copy and one vertical quad per
navmesh boundary edge, so walls coincide exactly with the walkable boundary.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import InvalidSpecError
from .asset import NavMesh, SceneAsset


@dataclass(frozen=True)
class GeneratorSpec:
    grid: tuple[int, int] = (4, 4)
    cell_size: float = 2.0
    wall_removal_prob: float = 0.15
    wall_thickness: float = 0.1
    wall_height: float = 2.5

    def validate(self) -> None:
        nx, nz = self.grid
        if nx < 1 or nz < 1:
            raise InvalidSpecError(f"grid must have at least one cell per axis, got {self.grid}")
        if not self.cell_size > 0:
            raise InvalidSpecError("cell_size must be positive")
        if not 0 < self.wall_thickness < self.cell_size / 2:
            raise InvalidSpecError("wall_thickness must lie in (0, cell_size / 2)")
        if not 0.0 <= self.wall_removal_prob <= 1.0:
            raise InvalidSpecError("wall_removal_prob must lie in [0, 1]")
        if not self.wall_height > 0:
            raise InvalidSpecError("wall_height must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        d = dict(d)
        if "grid" in d:
            d["grid"] = tuple(int(v) for v in d["grid"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        return d


def carve_maze(nx: int, nz: int, removal_prob: float, rng: np.random.Generator):
    """Return boolean wall-open masks ``open_x`` (nx-1, nz) and ``open_z`` (nx, nz-1)."""
    open_x = np.zeros((max(nx - 1, 0), nz), dtype=bool)
    open_z = np.zeros((nx, max(nz - 1, 0)), dtype=bool)
    visited = np.zeros((nx, nz), dtype=bool)
    start = (int(rng.integers(nx)), int(rng.integers(nz)))
    visited[start] = True
    stack = [start]
    while stack:
        i, j = stack[-1]
        options = []
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < nx and 0 <= b < nz and not visited[a, b]:
                options.append((a, b))
        if not options:
            stack.pop()
            continue
        a, b = options[int(rng.integers(len(options)))]
        if a != i:
            open_x[min(a, i), j] = True
        else:
            open_z[i, min(b, j)] = True
        visited[a, b] = True
        stack.append((a, b))

    for mask in (open_x, open_z):
        draws = rng.random(mask.shape)
        mask |= draws < removal_prob
    return open_x, open_z


def _axis_breaks(n: int, c: float, t: float) -> list[float]:
    # core k spans [p[2k], p[2k+1]]; boundary k (1..n-1) spans [p[2k-1], p[2k]]
    pts = [t]
    for k in range(1, n):
        pts += [k * c - t / 2, k * c + t / 2]
    pts.append(n * c - t)
    return pts


def _floor_rects(nx, nz, open_x, open_z):
    """Rectangles in breakpoint-index space: (ix0, ix1, iz0, iz1, cell)."""
    rects = []
    for j in range(nz):
        for i in range(nx):
            rects.append((2 * i, 2 * i + 1, 2 * j, 2 * j + 1, (i, j)))
    for j in range(nz):
        for i in range(nx - 1):
            if open_x[i, j]:
                k = i + 1
                rects.append((2 * k - 1, 2 * k, 2 * j, 2 * j + 1, (i, j)))
    for j in range(nz - 1):
        for i in range(nx):
            if open_z[i, j]:
                l = j + 1
                rects.append((2 * i, 2 * i + 1, 2 * l - 1, 2 * l, (i, j)))
    for l in range(1, nz):
        for k in range(1, nx):
            if open_x[k - 1, l - 1] and open_x[k - 1, l] and open_z[k - 1, l - 1] and open_z[k, l - 1]:
                rects.append((2 * k - 1, 2 * k, 2 * l - 1, 2 * l, (k - 1, l - 1)))
    return rects


def generate_scene(seed: int, spec: GeneratorSpec | None = None) -> SceneAsset:
    """Build a deterministic maze scene from ``(seed, spec)``."""
    spec = spec or GeneratorSpec()
    spec.validate()
    nx, nz = spec.grid
    c, t, h = float(spec.cell_size), float(spec.wall_thickness), float(spec.wall_height)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), nx, nz]))

    open_x, open_z = carve_maze(nx, nz, spec.wall_removal_prob, rng)
    cell_colors = rng.uniform(0.55, 0.95, size=(nx, nz, 3))
    xs = _axis_breaks(nx, c, t)
    zs = _axis_breaks(nz, c, t)
    rects = _floor_rects(nx, nz, open_x, open_z)

    # navmesh with shared vertices
    vert_index: dict[tuple[int, int], int] = {}
    nav_verts: list[tuple[float, float, float]] = []

    def vid(ix, iz):
        key = (ix, iz)
        if key not in vert_index:
            vert_index[key] = len(nav_verts)
            nav_verts.append((xs[ix], 0.0, zs[iz]))
        return vert_index[key]

    nav_tris = []
    tri_cell = []
    for ix0, ix1, iz0, iz1, cell in rects:
        a, b, cc, d = vid(ix0, iz0), vid(ix1, iz0), vid(ix1, iz1), vid(ix0, iz1)
        nav_tris += [(a, d, cc), (a, cc, b)]
        tri_cell += [cell, cell]
    navmesh = NavMesh(np.array(nav_verts), np.array(nav_tris))

    # render mesh: unshared vertices so each piece keeps its own color
    verts: list = []
    colors: list = []
    tris: list = []

    def quad(p0, p1, p2, p3, color):
        base = len(verts)
        verts.extend([p0, p1, p2, p3])
        colors.extend([color] * 4)
        tris.extend([(base, base + 1, base + 2), (base, base + 2, base + 3)])

    ceiling_color = np.array([0.92, 0.92, 0.9])
    for ix0, ix1, iz0, iz1, cell in rects:
        x0, x1, z0, z1 = xs[ix0], xs[ix1], zs[iz0], zs[iz1]
        quad((x0, 0.0, z0), (x0, 0.0, z1), (x1, 0.0, z1), (x1, 0.0, z0), cell_colors[cell])
        quad((x0, h, z0), (x1, h, z0), (x1, h, z1), (x0, h, z1), ceiling_color)
    nv = navmesh.vertices
    for ti, tri in enumerate(navmesh.triangles):
        for e in range(3):
            if navmesh.adjacency[ti, e] >= 0:
                continue
            p = nv[tri[e]]
            q = nv[tri[(e + 1) % 3]]
            wall = 0.8 * cell_colors[tri_cell[ti]]
            quad((p[0], 0.0, p[2]), (q[0], 0.0, q[2]), (q[0], h, q[2]), (p[0], h, p[2]), wall)

    bounds = np.array([[0.0, 0.0, 0.0], [nx * c, h, nz * c]])
    return SceneAsset(
        vertices=np.array(verts, dtype=np.float64),
        triangles=np.array(tris, dtype=np.int32),
        vertex_colors=np.array(colors, dtype=np.float64),
        navmesh=navmesh,
        bounds=bounds,
    )
