"""Geodesic distances on a flat navmesh.

Shortest paths inside a polygonal region bend only at reflex boundary
vertices, so the query structure is the visibility graph over those vertices
with all-pairs distances precomputed once per navmesh. A point query then needs
one batch of visibility tests from the point to every reflex vertex. Visibility
is decided by chaining the parameter intervals that the segment spends inside
each closed navmesh triangle; no sliver between triangles is ever crossed.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.sparse.csgraph import shortest_path

from ..errors import InvalidInputError
from ..scene.asset import NavMesh, triangle_areas_xz
from .geometry import (
    closest_points_on_triangles,
    covered_reach,
    inward_edge_normals,
    point_in_triangles,
    segment_intervals,
)

_CHUNK_ELEMS = 4_000_000


def _xz(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return p[..., [0, 2]] if p.shape[-1] == 3 else p


class NavQuery:
    """Precomputed geodesic and location queries for one navmesh."""

    def __init__(self, navmesh: NavMesh):
        if navmesh.num_triangles == 0:
            raise InvalidInputError("empty navmesh")
        self.navmesh = navmesh
        self.corners = navmesh.triangle_corners_xz()
        self.normals, self.origins = inward_edge_normals(self.corners)
        self.areas = triangle_areas_xz(navmesh.vertices, navmesh.triangles)
        self._area_cdf = np.cumsum(self.areas) / self.areas.sum()
        self.tri3d = navmesh.vertices[navmesh.triangles]
        self.reflex = self._reflex_vertices()
        self.reflex_xz = navmesh.vertices[self.reflex][:, [0, 2]]
        self.vertex_dist = self._all_pairs()

    @classmethod
    def of(cls, navmesh: NavMesh) -> "NavQuery":
        q = navmesh._cache.get("navquery")
        if q is None:
            q = cls(navmesh)
            navmesh._cache["navquery"] = q
        return q

    # -- construction ---------------------------------------------------
    def _reflex_vertices(self) -> np.ndarray:
        nm = self.navmesh
        angle = np.zeros(len(nm.vertices))
        c = self.corners
        for k in range(3):
            u = c[:, (k + 1) % 3] - c[:, k]
            v = c[:, (k + 2) % 3] - c[:, k]
            cosang = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            np.add.at(angle, nm.triangles[:, k], np.arccos(np.clip(cosang, -1.0, 1.0)))
        on_boundary = np.zeros(len(nm.vertices), dtype=bool)
        t_idx, e_idx = np.nonzero(nm.adjacency < 0)
        on_boundary[nm.triangles[t_idx, e_idx]] = True
        on_boundary[nm.triangles[t_idx, (e_idx + 1) % 3]] = True
        return np.nonzero(on_boundary & (angle > math.pi + 1e-7))[0]

    def _all_pairs(self) -> np.ndarray:
        r = self.reflex_xz
        n = len(r)
        if n == 0:
            return np.zeros((0, 0))
        ii, jj = np.triu_indices(n, k=1)
        vis = self.visible_pairs(r[ii], r[jj])
        w = np.zeros((n, n))
        lengths = np.linalg.norm(r[ii] - r[jj], axis=1)
        w[ii[vis], jj[vis]] = lengths[vis]
        w[jj[vis], ii[vis]] = lengths[vis]
        return shortest_path(w, method="D", directed=False)

    # -- segment queries ------------------------------------------------
    def reach(self, p, q) -> np.ndarray:
        """Fraction of each segment ``p -> q`` that stays on the navmesh from its start."""
        p = np.atleast_2d(_xz(p))
        q = np.atleast_2d(_xz(q))
        p, q = np.broadcast_arrays(p, q)
        out = np.empty(len(p))
        step = max(1, _CHUNK_ELEMS // (3 * self.navmesh.num_triangles))
        for s in range(0, len(p), step):
            enter, exit_ = segment_intervals(self.normals, self.origins, p[s:s + step], q[s:s + step])
            out[s:s + step] = covered_reach(enter, exit_)
        return out

    def visible_pairs(self, p, q) -> np.ndarray:
        return self.reach(p, q) >= 1.0 - 1e-9

    def visible_from(self, p, targets) -> np.ndarray:
        p = _xz(p)
        targets = np.atleast_2d(_xz(targets))
        if len(targets) == 0:
            return np.zeros(0, dtype=bool)
        return self.visible_pairs(np.broadcast_to(p, targets.shape), targets)

    # -- distances --------------------------------------------------------
    def _vertex_costs(self, point) -> np.ndarray:
        """Cost from ``point`` to every reflex vertex via a straight segment (inf if blocked)."""
        if len(self.reflex_xz) == 0:
            return np.zeros(0)
        vis = self.visible_from(point, self.reflex_xz)
        d = np.linalg.norm(self.reflex_xz - _xz(point), axis=1)
        return np.where(vis, d, np.inf)

    def geodesic(self, a, b) -> float:
        """Shortest on-mesh path length between two points (``inf`` if disconnected)."""
        a, b = _xz(a), _xz(b)
        if self.visible_from(a, b[None])[0]:
            return float(np.linalg.norm(a - b))
        if len(self.reflex_xz) == 0:
            return math.inf
        ca = self._vertex_costs(a)
        cb = self._vertex_costs(b)
        through = np.min(self.vertex_dist + cb[None, :], axis=1)
        return float(np.min(ca + through))

    def field(self, target) -> "DistanceField":
        return DistanceField(self, target)

    # -- location -------------------------------------------------------
    def locate(self, p) -> int:
        """Index of a navmesh triangle containing ``p`` in the floor plane, or -1."""
        inside = point_in_triangles(self.corners, np.atleast_2d(_xz(p)))[0]
        idx = np.flatnonzero(inside)
        return int(idx[0]) if len(idx) else -1

    def snap(self, points) -> np.ndarray:
        """Closest navmesh point to each 3D point."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.empty_like(pts)
        step = max(1, _CHUNK_ELEMS // (9 * self.navmesh.num_triangles))
        for s in range(0, len(pts), step):
            chunk = pts[s:s + step]
            cand = closest_points_on_triangles(chunk, self.tri3d)
            d2 = np.sum((cand - chunk[:, None, :]) ** 2, axis=2)
            best = np.argmin(d2, axis=1)
            out[s:s + step] = cand[np.arange(len(chunk)), best]
        return out

    def sample_point(self, rng: np.random.Generator) -> np.ndarray:
        """Uniformly distributed point on the navmesh (area weighted)."""
        t = int(np.searchsorted(self._area_cdf, rng.random(), side="right"))
        t = min(t, len(self._area_cdf) - 1)
        r1, r2 = rng.random(2)
        s = math.sqrt(r1)
        a, b, c = self.tri3d[t]
        return (1 - s) * a + s * (1 - r2) * b + s * r2 * c


class DistanceField:
    """Geodesic distance from arbitrary points to one fixed target point."""

    def __init__(self, query: NavQuery, target):
        self.query = query
        self.target = np.asarray(target, dtype=np.float64)
        cb = query._vertex_costs(self.target)
        if len(cb):
            self._to_target = np.min(query.vertex_dist + cb[None, :], axis=1)
        else:
            self._to_target = np.zeros(0)

    def __call__(self, p) -> float:
        q = self.query
        pt = _xz(p)
        tgt = _xz(self.target)
        targets = np.vstack([tgt[None], q.reflex_xz]) if len(q.reflex_xz) else tgt[None]
        vis = q.visible_from(pt, targets)
        if vis[0]:
            return float(np.linalg.norm(pt - tgt))
        if len(q.reflex_xz) == 0:
            return math.inf
        d = np.linalg.norm(q.reflex_xz - pt, axis=1)
        return float(np.min(np.where(vis[1:], d, np.inf) + self._to_target))

    def next_waypoint(self, p) -> np.ndarray:
        """First corner (or the target itself) on a shortest path from ``p``, in the floor plane."""
        q = self.query
        pt = _xz(p)
        tgt = _xz(self.target)
        targets = np.vstack([tgt[None], q.reflex_xz]) if len(q.reflex_xz) else tgt[None]
        vis = q.visible_from(pt, targets)
        if vis[0] or len(q.reflex_xz) == 0:
            return tgt
        d = np.linalg.norm(q.reflex_xz - pt, axis=1)
        total = np.where(vis[1:], d, np.inf) + self._to_target
        # ignore a corner the point already sits on
        total = np.where(d < 1e-6, np.inf, total)
        return q.reflex_xz[int(np.argmin(total))]


def geodesic_distance(navmesh: NavMesh, a, b) -> float:
    return NavQuery.of(navmesh).geodesic(a, b)


def snap_to_navmesh(navmesh: NavMesh, point) -> np.ndarray:
    if navmesh.num_triangles == 0:
        raise InvalidInputError("empty navmesh")
    return NavQuery.of(navmesh).snap(np.asarray(point, dtype=np.float64)[None])[0]
