"""Independent reference implementations used as test oracles.

Each one is coded directly from the defining formula, with plain loops where
that keeps it obviously correct, and shares no code with the package.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra


# -- optimizer -------------------------------------------------------------------
def lamb_reference(theta, grad, m, v, t, lr, wd=1e-2, rho=1e-2, phi_cap=10.0, b1=0.9, b2=0.999, eps=1e-8,
                   no_trust=False):
    """One Lamb step on flat Python lists; returns (theta', m', v', r)."""
    m2 = [b1 * mi + (1 - b1) * gi for mi, gi in zip(m, grad)]
    v2 = [b2 * vi + (1 - b2) * gi * gi for vi, gi in zip(v, grad)]
    s = [(mi / (1 - b1 ** t)) / (math.sqrt(vi / (1 - b2 ** t)) + eps) for mi, vi in zip(m2, v2)]
    if no_trust:
        return [th - lr * si for th, si in zip(theta, s)], m2, v2, 1.0
    u = [si + wd * th for si, th in zip(s, theta)]
    tn = math.sqrt(sum(th * th for th in theta))
    un = math.sqrt(sum(ui * ui for ui in u))
    if un == 0.0:
        r = 1.0
    else:
        r = min(tn, phi_cap) / un
        r = max(rho, min(1.0 / rho, r))
    return [th - lr * r * ui for th, ui in zip(theta, u)], m2, v2, r


def adamw_reference(theta, grad, m, v, t, lr, wd=1e-2, b1=0.9, b2=0.999, eps=1e-8):
    """Decoupled weight decay Adam, lr applied to both the direction and the decay."""
    m2 = [b1 * mi + (1 - b1) * gi for mi, gi in zip(m, grad)]
    v2 = [b2 * vi + (1 - b2) * gi * gi for vi, gi in zip(v, grad)]
    out = []
    for th, mi, vi in zip(theta, m2, v2):
        mhat = mi / (1 - b1 ** t)
        vhat = vi / (1 - b2 ** t)
        out.append(th - lr * (mhat / (math.sqrt(vhat) + eps) + wd * th))
    return out, m2, v2


# -- advantages --------------------------------------------------------------------
def gae_bruteforce(rewards, values, dones, gamma, lam):
    """A_t as an explicit discounted sum of TD residuals, cut at episode ends."""
    n, length = rewards.shape
    adv = np.zeros((n, length))
    for i in range(n):
        delta = [rewards[i, t] + gamma * values[i, t + 1] * (1 - dones[i, t]) - values[i, t] for t in range(length)]
        for t in range(length):
            total, weight = 0.0, 1.0
            for k in range(t, length):
                total += weight * delta[k]
                if dones[i, k]:
                    break
                weight *= gamma * lam
            adv[i, t] = total
    return adv, adv + values[:, :-1]


def ppo_loss_reference(logits, values, actions, old_logp, adv, returns, clip, vcoef, ecoef):
    rows = len(actions)
    pol = val = ent = 0.0
    for i in range(rows):
        z = logits[i]
        mx = max(z)
        lse = mx + math.log(sum(math.exp(zj - mx) for zj in z))
        logp = [zj - lse for zj in z]
        ratio = math.exp(logp[actions[i]] - old_logp[i])
        pol += min(ratio * adv[i], min(max(ratio, 1 - clip), 1 + clip) * adv[i])
        val += (values[i] - returns[i]) ** 2
        ent += -sum(math.exp(lp) * lp for lp in logp)
    return -pol / rows + vcoef * val / rows - ecoef * ent / rows


# -- geometry ---------------------------------------------------------------------
def inside_any_triangle(tris_xz: np.ndarray, pts: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Barycentric point-in-triangle test against every triangle; (P,) bool."""
    out = np.zeros(len(pts), dtype=bool)
    for a, b, c in tris_xz:
        v0, v1 = b - a, c - a
        v2 = pts - a
        den = v0[0] * v1[1] - v1[0] * v0[1]
        u = (v2[:, 0] * v1[1] - v1[0] * v2[:, 1]) / den
        w = (v0[0] * v2[:, 1] - v2[:, 0] * v0[1]) / den
        out |= (u >= -eps) & (w >= -eps) & (u + w <= 1 + eps)
    return out


def closest_point_on_triangle(p, a, b, c):
    """Closest point by projecting onto the plane and falling back to the three edges."""
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n)
    proj = p - np.dot(p - a, n) * n
    # barycentric of the projection
    v0, v1, v2 = b - a, c - a, proj - a
    d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
    d20, d21 = v2 @ v0, v2 @ v1
    den = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    if v >= 0 and w >= 0 and v + w <= 1:
        return proj
    best, best_d = None, math.inf
    for s, e in ((a, b), (b, c), (c, a)):
        t = np.clip(np.dot(p - s, e - s) / np.dot(e - s, e - s), 0.0, 1.0)
        q = s + t * (e - s)
        d = np.linalg.norm(p - q)
        if d < best_d:
            best, best_d = q, d
    return best


def snap_bruteforce(vertices, triangles, p):
    best, best_d = None, math.inf
    for tri in triangles:
        q = closest_point_on_triangle(p, *vertices[tri])
        d = np.linalg.norm(p - q)
        if d < best_d:
            best, best_d = q, d
    return best


def _primitive_offsets(radius: int) -> list[tuple[int, int]]:
    out = []
    for dx in range(-radius, radius + 1):
        for dz in range(-radius, radius + 1):
            if (dx, dz) != (0, 0) and math.gcd(abs(dx), abs(dz)) == 1:
                out.append((dx, dz))
    return out


class GridGeodesic:
    """Shortest paths on a fine occupancy grid of the navmesh (Dijkstra).

    Grid nodes are cell centers inside the navmesh; edges join nodes along
    every primitive offset up to ``radius`` cells when all cells the straight
    edge passes are free, which keeps the grid metric within about 1.3% of
    Euclidean. Query points join the graph through virtual nodes linked to
    nearby free nodes at their exact Euclidean distance.
    """

    def __init__(self, tris_xz: np.ndarray, h: float = 0.02, radius: int = 3):
        self.h = h
        lo = tris_xz.reshape(-1, 2).min(axis=0) - 2 * h
        hi = tris_xz.reshape(-1, 2).max(axis=0) + 2 * h
        self.lo = lo
        nx, nz = np.ceil((hi - lo) / h).astype(int)
        self.shape = (nx, nz)
        gx = lo[0] + (np.arange(nx) + 0.5) * h
        gz = lo[1] + (np.arange(nz) + 0.5) * h
        X, Z = np.meshgrid(gx, gz, indexing="ij")
        pts = np.stack([X.ravel(), Z.ravel()], axis=1)
        self.free = inside_any_triangle(tris_xz, pts).reshape(nx, nz)
        self.xy = pts
        rows, cols, wts = [], [], []
        ids = np.arange(nx * nz).reshape(nx, nz)
        for dx, dz in _primitive_offsets(radius):
            if (dx, dz) < (0, 0):
                continue  # each undirected edge once
            ok = self._shifted(self.free, 0, 0, dx, dz)
            steps = 2 * max(abs(dx), abs(dz))
            for k in range(1, steps):
                fx, fz = dx * k / steps, dz * k / steps
                ok &= self._shifted(self.free, int(np.floor(fx + 0.5)), int(np.floor(fz + 0.5)), dx, dz)
                ok &= self._shifted(self.free, int(np.ceil(fx - 0.5)), int(np.ceil(fz - 0.5)), dx, dz)
            ok &= self._shifted(self.free, dx, dz, dx, dz)
            src = self._shifted(ids, 0, 0, dx, dz, fill=-1)[ok]
            dst = self._shifted(ids, dx, dz, dx, dz, fill=-1)[ok]
            rows.append(src)
            cols.append(dst)
            wts.append(np.full(len(src), h * math.hypot(dx, dz)))
        self.rows = np.concatenate(rows)
        self.cols = np.concatenate(cols)
        self.wts = np.concatenate(wts)
        self.n = nx * nz

    @staticmethod
    def _shifted(a, ox, oz, dx, dz, fill=False):
        """View of ``a`` at offset (ox, oz) over the region where both ends of (dx, dz) edges exist."""
        nx, nz = a.shape
        x0, x1 = max(0, -dx), nx - max(0, dx)
        z0, z1 = max(0, -dz), nz - max(0, dz)
        return a[x0 + ox:x1 + ox, z0 + oz:z1 + oz].copy()

    def _attach(self, p, reach: float):
        """Free nodes within ``reach`` of ``p`` and their distances."""
        d = np.linalg.norm(self.xy - p, axis=1)
        idx = np.flatnonzero((d <= reach) & self.free.ravel())
        return idx, d[idx]

    def distances(self, sources: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """(S, T) grid geodesic distances between floor points (x, z)."""
        link = 1.5 * self.h
        rows, cols, wts = [self.rows], [self.cols], [self.wts]
        for k, p in enumerate(sources):
            idx, d = self._attach(p, link)
            rows.append(np.full(len(idx), self.n + k))
            cols.append(idx)
            wts.append(d)
        size = self.n + len(sources)
        g = coo_matrix((np.concatenate(wts), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)).tocsr()
        dist = dijkstra(g, directed=False, indices=np.arange(self.n, size))
        out = np.empty((len(sources), len(targets)))
        for j, q in enumerate(targets):
            idx, d = self._attach(q, link)
            out[:, j] = np.min(dist[:, idx] + d[None, :], axis=1) if len(idx) else np.inf
        return out

    def visible(self, p, q, tris_xz: np.ndarray) -> bool:
        """Straight segment p-q stays on the mesh, sampled every h/8."""
        steps = max(2, int(np.ceil(np.linalg.norm(q - p) / (self.h / 8))) + 1)
        s = np.linspace(0.0, 1.0, steps)[:, None]
        return bool(inside_any_triangle(tris_xz, p + s * (q - p), eps=1e-9).all())

    def pair_distances(self, a: np.ndarray, b: np.ndarray, tris_xz: np.ndarray, chunk: int = 50) -> np.ndarray:
        """Distance for each pair (a[i], b[i]): grid path or, when unobstructed, the straight segment."""
        out = np.empty(len(a))
        for lo in range(0, len(a), chunk):
            d = self.distances(a[lo:lo + chunk], b[lo:lo + chunk])
            out[lo:lo + chunk] = np.diag(d)
        for i, (p, q) in enumerate(zip(a, b)):
            if self.visible(p, q, tris_xz):
                out[i] = min(out[i], float(np.linalg.norm(q - p)))
        return out
