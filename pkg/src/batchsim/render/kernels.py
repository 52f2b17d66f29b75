"""Numba kernels for frustum culling and tiled rasterization.

Geometry of all resident assets is packed into flat arrays; each view names a
triangle range ``[tri_start, tri_end)`` in the pack. Per-view camera rows are

    0-2 eye, 3 sin(heading), 4 cos(heading), 5 fx, 6 fy, 7 near, 8 far

Screen space has y pointing down; vertex positions are snapped to 1/256 pixel.
"""

from __future__ import annotations

import numpy as np
from numba import njit

SUBPIXEL_BITS = 8
SUBPIXEL = 1 << SUBPIXEL_BITS
HALF = SUBPIXEL // 2


@njit(cache=True, nogil=True, inline="always")
def _to_eye(cam, px, py, pz):
    dx = px - cam[0]
    dy = py - cam[1]
    dz = pz - cam[2]
    s = cam[3]
    c = cam[4]
    # right = (cos, 0, -sin), forward = (-sin, 0, -cos)
    xe = c * dx - s * dz
    ze = -s * dx - c * dz
    return xe, dy, ze


@njit(cache=True, nogil=True, error_model="numpy")
def cull_views(cams, tri_start, tri_end, verts, tris, out_idx, out_start, out_count):
    """Write the indices of triangles not entirely outside one frustum plane."""
    for v in range(cams.shape[0]):
        cam = cams[v]
        fx = cam[5]
        fy = cam[6]
        near = cam[7]
        far = cam[8]
        w = out_start[v]
        for t in range(tri_start[v], tri_end[v]):
            o0 = True  # near
            o1 = True  # far
            o2 = True  # left
            o3 = True  # right
            o4 = True  # bottom
            o5 = True  # top
            for k in range(3):
                vi = tris[t, k]
                xe, ye, ze = _to_eye(cam, verts[vi, 0], verts[vi, 1], verts[vi, 2])
                if ze - near >= 0.0:
                    o0 = False
                if far - ze >= 0.0:
                    o1 = False
                if ze + fx * xe >= 0.0:
                    o2 = False
                if ze - fx * xe >= 0.0:
                    o3 = False
                if ze + fy * ye >= 0.0:
                    o4 = False
                if ze - fy * ye >= 0.0:
                    o5 = False
            if not (o0 or o1 or o2 or o3 or o4 or o5):
                out_idx[w] = t
                w += 1
        out_count[v] = w - out_start[v]


@njit(cache=True, nogil=True, error_model="numpy")
def _is_top_left(dx, dy):
    return dy < 0 or (dy == 0 and dx > 0)


@njit(cache=True, nogil=True, inline="always")
def _first_in(e, a, r):
    """Smallest pixel x with e + a * (x * SUBPIXEL + HALF) >= 0, for a > 0."""
    px = np.int64(np.ceil((-e * r - HALF) * (1.0 / SUBPIXEL)))
    while e + a * (px * SUBPIXEL + HALF) < 0:
        px += 1
    while e + a * ((px - 1) * SUBPIXEL + HALF) >= 0:
        px -= 1
    return px


@njit(cache=True, nogil=True, inline="always")
def _last_in(e, a, r):
    """Largest pixel x with e + a * (x * SUBPIXEL + HALF) >= 0, for a < 0."""
    px = np.int64(np.floor((-e * r - HALF) * (1.0 / SUBPIXEL)))
    while e + a * (px * SUBPIXEL + HALF) < 0:
        px -= 1
    while e + a * ((px + 1) * SUBPIXEL + HALF) >= 0:
        px += 1
    return px


@njit(cache=True, nogil=True, error_model="numpy")
def _raster_tri(X, Y, FX, FY, Z, C, has_color, x0, y0, W, H, iz_near, iz_far, izbuf, color):
    """Rasterize one screen triangle into a tile.

    Coverage uses the fixed-point corners (X, Y); depth and color are
    interpolated from the unsnapped float corners (FX, FY) so that snapping
    does not tilt the depth plane of steep triangles. Each edge function is
    affine in the sample x, so the covered run of every row is solved for
    directly (float guess, exact integer fix-up) instead of testing every
    pixel of the bounding box. The z-test runs on ``izbuf``, the tile's
    inverse-depth buffer (0 = empty), so covered pixels need no division.
    """
    area = (X[1] - X[0]) * (Y[2] - Y[0]) - (Y[1] - Y[0]) * (X[2] - X[0])
    if area == 0:
        return
    a, b, c = 0, 1, 2
    if area < 0:
        b, c = 2, 1
        area = -area
    xa, ya = X[a], Y[a]
    xb, yb = X[b], Y[b]
    xc, yc = X[c], Y[c]
    # edge k is opposite vertex k: e0 = b->c, e1 = c->a, e2 = a->b
    bias0 = 0 if _is_top_left(xc - xb, yc - yb) else -1
    bias1 = 0 if _is_top_left(xa - xc, ya - yc) else -1
    bias2 = 0 if _is_top_left(xb - xa, yb - ya) else -1
    # w_k = c_k(sy) + a_k * sx
    a0 = -(yc - yb)
    a1 = -(ya - yc)
    a2 = -(yb - ya)

    miny = min(ya, yb, yc)
    maxy = max(ya, yb, yc)
    py0 = max((miny - HALF + SUBPIXEL - 1) >> SUBPIXEL_BITS, 0)
    py1 = min((maxy - HALF) >> SUBPIXEL_BITS, H - 1)
    if py0 > py1:
        return

    iza = 1.0 / Z[a]
    izb = 1.0 / Z[b]
    izc = 1.0 / Z[c]
    fxa, fya = FX[a], FY[a]
    fxb, fyb = FX[b], FY[b]
    fxc, fyc = FX[c], FY[c]
    farea = (fxb - fxa) * (fyc - fya) - (fyb - fya) * (fxc - fxa)
    if farea == 0.0:
        return
    inv_area = 1.0 / farea
    dl0 = -(fyc - fyb) * inv_area
    dl1 = -(fya - fyc) * inv_area
    dl2 = -(fyb - fya) * inv_area
    diz = dl0 * iza + dl1 * izb + dl2 * izc
    r0 = 1.0 / a0 if a0 != 0 else 0.0
    r1 = 1.0 / a1 if a1 != 0 else 0.0
    r2 = 1.0 / a2 if a2 != 0 else 0.0
    sy = py0 * SUBPIXEL + HALF
    c0 = (xc - xb) * (sy - yb) + (yc - yb) * xb
    c1 = (xa - xc) * (sy - yc) + (ya - yc) * xc
    c2 = (xb - xa) * (sy - ya) + (yb - ya) * xa
    s0 = (xc - xb) * SUBPIXEL
    s1 = (xa - xc) * SUBPIXEL
    s2 = (xb - xa) * SUBPIXEL
    for py in range(py0, py1 + 1):
        if py > py0:
            c0 += s0
            c1 += s1
            c2 += s2
        lo = np.int64(0)
        hi = np.int64(W - 1)
        e0 = c0 + bias0
        e1 = c1 + bias1
        e2 = c2 + bias2
        if a0 > 0:
            lo = max(lo, _first_in(e0, a0, r0))
        elif a0 < 0:
            hi = min(hi, _last_in(e0, a0, r0))
        elif e0 < 0:
            continue
        if a1 > 0:
            lo = max(lo, _first_in(e1, a1, r1))
        elif a1 < 0:
            hi = min(hi, _last_in(e1, a1, r1))
        elif e1 < 0:
            continue
        if a2 > 0:
            lo = max(lo, _first_in(e2, a2, r2))
        elif a2 < 0:
            hi = min(hi, _last_in(e2, a2, r2))
        elif e2 < 0:
            continue
        if lo > hi:
            continue
        row = y0 + py
        # barycentrics and 1/z are affine along the row
        px = lo + 0.5
        qy = py + 0.5
        l0 = ((fxc - fxb) * (qy - fyb) - (fyc - fyb) * (px - fxb)) * inv_area
        l1 = ((fxa - fxc) * (qy - fyc) - (fya - fyc) * (px - fxc)) * inv_area
        l2 = ((fxb - fxa) * (qy - fya) - (fyb - fya) * (px - fxa)) * inv_area
        iz0 = l0 * iza + l1 * izb + l2 * izc
        n = hi - lo + 1
        if not has_color:
            # branch-free so the loop vectorizes
            for k in range(n):
                iz = iz0 + k * diz
                cur = izbuf[py, lo + k]
                izbuf[py, lo + k] = iz if (iz > cur and iz <= iz_near and iz >= iz_far) else cur
            continue
        for k in range(n):
            iz = iz0 + k * diz
            if iz > izbuf[py, lo + k] and iz <= iz_near and iz >= iz_far:
                izbuf[py, lo + k] = iz
                col = x0 + lo + k
                m0 = (l0 + k * dl0) * iza
                m1 = (l1 + k * dl1) * izb
                m2 = (l2 + k * dl2) * izc
                for ch in range(3):
                    val = (m0 * C[a, ch] + m1 * C[b, ch] + m2 * C[c, ch]) / iz
                    color[row, col, ch] = np.float32(val)


@njit(cache=True, nogil=True, error_model="numpy")
def raster_views(cams, tile_x, tile_y, W, H, idx, idx_start, idx_count, verts, tris, colors, has_color,
                 depth, color, clear_color):
    """Clear and rasterize every listed view into its tile of the megaframe."""
    izbuf = np.zeros((H, W))
    poly_e = np.empty((4, 3))
    poly_c = np.empty((4, 3))
    X = np.empty(3, np.int64)
    Y = np.empty(3, np.int64)
    FX = np.empty(3)
    FY = np.empty(3)
    Z = np.empty(3)
    C = np.empty((3, 3))
    ein = np.empty((3, 3))
    cin = np.zeros((3, 3))
    for v in range(cams.shape[0]):
        cam = cams[v]
        fx = cam[5]
        fy = cam[6]
        near = cam[7]
        far = cam[8]
        iz_near = 1.0 / near
        iz_far = 1.0 / far
        x0 = tile_x[v]
        y0 = tile_y[v]
        izbuf[:, :] = 0.0
        if has_color:
            for yy in range(H):
                for xx in range(W):
                    for ch in range(3):
                        color[y0 + yy, x0 + xx, ch] = clear_color[ch]
        for j in range(idx_count[v]):
            t = idx[idx_start[v] + j]
            # eye-space corners
            for k in range(3):
                vi = tris[t, k]
                xe, ye, ze = _to_eye(cam, verts[vi, 0], verts[vi, 1], verts[vi, 2])
                ein[k, 0] = xe
                ein[k, 1] = ye
                ein[k, 2] = ze
                if has_color:
                    for ch in range(3):
                        cin[k, ch] = colors[vi, ch]
            # clip against the near plane
            n = 0
            for k in range(3):
                k2 = (k + 1) % 3
                za = ein[k, 2]
                zb = ein[k2, 2]
                ina = za >= near
                inb = zb >= near
                if ina:
                    for q in range(3):
                        poly_e[n, q] = ein[k, q]
                        poly_c[n, q] = cin[k, q]
                    n += 1
                if ina != inb:
                    s = (near - za) / (zb - za)
                    for q in range(3):
                        poly_e[n, q] = ein[k, q] + s * (ein[k2, q] - ein[k, q])
                        poly_c[n, q] = cin[k, q] + s * (cin[k2, q] - cin[k, q])
                    poly_e[n, 2] = near
                    n += 1
            if n < 3:
                continue
            for f in range(1, n - 1):
                for k in range(3):
                    src = 0 if k == 0 else f + k - 1
                    ze = poly_e[src, 2]
                    sx = (poly_e[src, 0] * fx / ze + 1.0) * 0.5 * W
                    sy = (1.0 - poly_e[src, 1] * fy / ze) * 0.5 * H
                    FX[k] = sx
                    FY[k] = sy
                    X[k] = np.int64(np.floor(sx * SUBPIXEL + 0.5))
                    Y[k] = np.int64(np.floor(sy * SUBPIXEL + 0.5))
                    Z[k] = ze
                    for ch in range(3):
                        C[k, ch] = poly_c[src, ch]
                _raster_tri(X, Y, FX, FY, Z, C, has_color, x0, y0, W, H, iz_near, iz_far, izbuf, color)
        far32 = np.float32(far)
        for yy in range(H):
            for xx in range(W):
                iz = izbuf[yy, xx]
                depth[y0 + yy, x0 + xx] = far32 if iz == 0.0 else np.float32(1.0 / iz)


@njit(cache=True, nogil=True, error_model="numpy")
def downsample2(src, dst):
    """2x2 box filter of a 2D plane."""
    for y in range(dst.shape[0]):
        for x in range(dst.shape[1]):
            dst[y, x] = 0.25 * (src[2 * y, 2 * x] + src[2 * y, 2 * x + 1]
                                + src[2 * y + 1, 2 * x] + src[2 * y + 1, 2 * x + 1])


@njit(cache=True, nogil=True, error_model="numpy")
def downsample2_rgb(src, dst):
    """2x2 box filter of an (H, W, 3) image."""
    for y in range(dst.shape[0]):
        for x in range(dst.shape[1]):
            for ch in range(3):
                dst[y, x, ch] = 0.25 * (src[2 * y, 2 * x, ch] + src[2 * y, 2 * x + 1, ch]
                                        + src[2 * y + 1, 2 * x, ch] + src[2 * y + 1, 2 * x + 1, ch])
