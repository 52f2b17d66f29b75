"""Scene asset and navigation mesh containers."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import InvalidInputError

MIN_TRIANGLE_AREA = 1e-9


def triangle_areas_xz(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Unsigned area of each triangle projected on the floor (x, z) plane."""
    a = vertices[triangles[:, 0]][:, [0, 2]]
    b = vertices[triangles[:, 1]][:, [0, 2]]
    c = vertices[triangles[:, 2]][:, [0, 2]]
    u, v = b - a, c - a
    return 0.5 * np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])


def build_adjacency(triangles: np.ndarray) -> np.ndarray:
    """Neighbor triangle across each edge, -1 on the boundary.

    Edge ``e`` of triangle ``t`` joins ``triangles[t, e]`` and ``triangles[t, (e + 1) % 3]``.
    """
    adjacency = np.full(triangles.shape, -1, dtype=np.int32)
    owner: dict[tuple[int, int], tuple[int, int]] = {}
    for t, tri in enumerate(triangles.tolist()):
        for e in range(3):
            a, b = tri[e], tri[(e + 1) % 3]
            key = (a, b) if a < b else (b, a)
            other = owner.pop(key, None)
            if other is None:
                owner[key] = (t, e)
            else:
                adjacency[t, e] = other[0]
                adjacency[other[0], other[1]] = t
    return adjacency


@dataclass(eq=False)
class NavMesh:
    """Walkable floor region as a triangle mesh.

    Vertices are 3D (x, y, z) with y up; all path queries work in the (x, z) plane.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    adjacency: np.ndarray = None  # type: ignore[assignment]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if self.adjacency is None:
            self.adjacency = build_adjacency(self.triangles)
        self.adjacency = np.ascontiguousarray(self.adjacency, dtype=np.int32).reshape(-1, 3)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def area(self) -> float:
        return float(triangle_areas_xz(self.vertices, self.triangles).sum())

    def triangle_corners_xz(self) -> np.ndarray:
        """(T, 3, 2) array of triangle corners in the floor plane."""
        corners = self._cache.get("corners_xz")
        if corners is None:
            corners = self.vertices[self.triangles][:, :, [0, 2]].copy()
            self._cache["corners_xz"] = corners
        return corners

    def validate(self) -> None:
        if len(self.triangles) == 0:
            raise InvalidInputError("navmesh has no triangles")
        if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
            raise InvalidInputError("navmesh triangle index out of range")
        if np.any(triangle_areas_xz(self.vertices, self.triangles) <= MIN_TRIANGLE_AREA):
            raise InvalidInputError("degenerate navmesh triangle")
        for t, row in enumerate(self.adjacency):
            for e, n in enumerate(row):
                if n >= 0 and t not in self.adjacency[n]:
                    raise InvalidInputError(f"asymmetric adjacency between {t} and {n}")


@dataclass(eq=False)
class SceneAsset:
    """Render mesh, optional vertex colors and navigation mesh of one environment.

    ``id`` is the SHA-256 of the canonical content encoding, so two assets with
    identical arrays always share an id.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    navmesh: NavMesh
    vertex_colors: Optional[np.ndarray] = None
    bounds: np.ndarray = None  # type: ignore[assignment]
    id: str = ""

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if self.vertex_colors is not None:
            self.vertex_colors = np.ascontiguousarray(self.vertex_colors, dtype=np.float64).reshape(-1, 3)
        if self.bounds is None:
            pts = self.vertices if len(self.vertices) else np.zeros((1, 3))
            self.bounds = np.stack([pts.min(axis=0), pts.max(axis=0)])
        self.bounds = np.ascontiguousarray(self.bounds, dtype=np.float64).reshape(2, 3)
        if not self.id:
            self.id = content_hash(self)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def validate(self) -> None:
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise InvalidInputError("triangle index out of range")
        if self.vertex_colors is not None and len(self.vertex_colors) != len(self.vertices):
            raise InvalidInputError("vertex color count differs from vertex count")
        nv = self.navmesh.vertices
        lo, hi = self.bounds
        if np.any(nv < lo - 1e-9) or np.any(nv > hi + 1e-9):
            raise InvalidInputError("navmesh vertex outside scene bounds")
        self.navmesh.validate()


def _le(arr: np.ndarray, dtype: str) -> bytes:
    return np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()


def content_bytes(asset: SceneAsset) -> list[bytes]:
    """Canonical little-endian encoding of everything the id covers."""
    nav = asset.navmesh
    colors = asset.vertex_colors
    parts = [
        np.array([len(asset.vertices), len(asset.triangles), len(nav.vertices), len(nav.triangles),
                  0 if colors is None else 1], dtype="<u8").tobytes(),
        _le(asset.vertices, "f8"),
        _le(asset.triangles, "u4"),
        b"" if colors is None else _le(colors, "f8"),
        _le(nav.vertices, "f8"),
        _le(nav.triangles, "u4"),
        _le(nav.adjacency, "i4"),
        _le(asset.bounds, "f8"),
    ]
    return parts


def content_hash(asset: SceneAsset) -> str:
    h = hashlib.sha256()
    for part in content_bytes(asset):
        h.update(part)
    return h.hexdigest()
