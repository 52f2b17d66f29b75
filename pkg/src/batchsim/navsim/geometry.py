"""Vectorized navmesh geometry: segment coverage, point location, closest points."""

from __future__ import annotations

import numpy as np

# Half-plane slack, in meters, so that points on shared or boundary edges count as inside.
EDGE_EPS = 1e-9
# Gap tolerance, in segment parameter units, when chaining covered intervals.
CHAIN_TOL = 1e-9


def inward_edge_normals(corners: np.ndarray):
    """Unit inward normals and edge origins for (T, 3, 2) triangles."""
    a = corners
    b = np.roll(corners, -1, axis=1)
    edge = b - a
    u = corners[:, 1] - corners[:, 0]
    v = corners[:, 2] - corners[:, 0]
    sign = np.sign(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])[:, None, None]
    normal = sign * np.stack([-edge[..., 1], edge[..., 0]], axis=-1)
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)
    return normal, a


def segment_intervals(normals, origins, p, q, eps=EDGE_EPS):
    """Parameter interval of each segment inside each closed triangle.

    ``p`` and ``q`` are (S, 2). Returns ``(enter, exit)`` of shape (S, T); empty
    intervals have ``enter > exit``.
    """
    d = q - p
    # (S, T, 3)
    num = np.einsum("tek,stek->ste", normals, p[:, None, None, :] - origins[None]) + eps
    den = np.einsum("tek,sk->ste", normals, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = -num / den
    lower = np.where(den > 0, bound, -np.inf)
    upper = np.where(den < 0, bound, np.inf)
    blocked = (den == 0) & (num < 0)
    enter = np.maximum(lower.max(axis=2), 0.0)
    exit_ = np.minimum(upper.min(axis=2), 1.0)
    exit_ = np.where(blocked.any(axis=2), -np.inf, exit_)
    return enter, exit_


def covered_reach(enter: np.ndarray, exit_: np.ndarray, tol: float = CHAIN_TOL) -> np.ndarray:
    """Largest ``t`` such that ``[0, t]`` lies in the union of intervals; ``-1`` if 0 is uncovered."""
    enter = np.where(enter <= exit_, enter, np.inf)
    order = np.argsort(enter, axis=1, kind="stable")
    e = np.take_along_axis(enter, order, axis=1)
    x = np.take_along_axis(exit_, order, axis=1)
    reach = np.maximum.accumulate(x, axis=1)
    prev = np.concatenate([np.full((len(e), 1), -np.inf), reach[:, :-1]], axis=1)
    prev[:, 0] = 0.0
    gap = e > prev + tol
    has_gap = gap.any(axis=1)
    first = np.argmax(gap, axis=1)
    rows = np.arange(len(e))
    out = np.where(has_gap, prev[rows, first], reach[:, -1])
    out = np.where(has_gap & (first == 0), -1.0, out)
    return out


def point_in_triangles(corners: np.ndarray, pts: np.ndarray, eps: float = EDGE_EPS) -> np.ndarray:
    """(P, T) membership of floor-plane points in closed triangles."""
    normals, origins = inward_edge_normals(corners)
    s = np.einsum("tek,ptek->pte", normals, pts[:, None, None, :] - origins[None])
    return (s >= -eps).all(axis=2)


def closest_points_on_triangles(pts: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Closest point on each triangle to each point; (P, 3) x (T, 3, 3) -> (P, T, 3).

    Voronoi-region classification of the point against the triangle's vertices,
    edges and face.
    """
    p = pts[:, None, :]
    a, b, c = tris[None, :, 0], tris[None, :, 1], tris[None, :, 2]
    ab, ac = b - a, c - a
    ap, bp, cp = p - a, p - b, p - c

    def dot(x, y):
        return np.einsum("...k,...k->...", x, y)

    d1, d2 = dot(ab, ap), dot(ac, ap)
    d3, d4 = dot(ab, bp), dot(ac, bp)
    d5, d6 = dot(ab, cp), dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v_face = vb / denom
        w_face = vc / denom
        v_ab = d1 / (d1 - d3)
        w_ac = d2 / (d2 - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))

    out = a + v_face[..., None] * ab + w_face[..., None] * ac
    region_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    out = np.where(region_bc[..., None], b + w_bc[..., None] * (c - b), out)
    region_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    out = np.where(region_ac[..., None], a + w_ac[..., None] * ac, out)
    region_c = (d6 >= 0) & (d5 <= d6)
    out = np.where(region_c[..., None], c, out)
    region_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    out = np.where(region_ab[..., None], a + v_ab[..., None] * ab, out)
    region_b = (d3 >= 0) & (d4 <= d3)
    out = np.where(region_b[..., None], b, out)
    region_a = (d1 <= 0) & (d2 <= 0)
    out = np.where(region_a[..., None], a, out)
    return out
