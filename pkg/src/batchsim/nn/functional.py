"""Convolution and rearrangement ops on :class:`Tensor`.

Convolutions use a channel-major layout ``(C, N, H, W)``: every kernel offset
then becomes one ``(O, C) x (C, N*H*W)`` matrix product, with no transposes
and no unrolled patch matrix.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, _make


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Direct 2-D cross-correlation of ``x (C, N, H, W)`` with ``w (O, C, k, k)``."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    C, N, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if Cw != C:
        raise ShapeError(f"conv2d channel mismatch: input {C}, weight {Cw}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # (kh, kw, O, C): each offset's weight matrix contiguous, as BLAS needs
    wk = np.ascontiguousarray(w.data.transpose(2, 3, 0, 1))

    def window(i: int, j: int):
        return (slice(None), slice(None), slice(i, i + stride * (Ho - 1) + 1, stride),
                slice(j, j + stride * (Wo - 1) + 1, stride))

    def patch(i: int, j: int) -> np.ndarray:
        return np.ascontiguousarray(xp[window(i, j)]).reshape(C, -1)

    out = np.zeros((O, N * Ho * Wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += wk[i, j] @ patch(i, j)
    out = out.reshape(O, N, Ho, Wo)

    def back(g):
        g2 = g.reshape(O, -1)
        gw = np.empty_like(w.data)
        gxp = np.zeros_like(xp) if x.requires_grad else None
        # patches are rebuilt here rather than kept alive between passes
        for i in range(kh):
            for j in range(kw):
                gw[:, :, i, j] = g2 @ patch(i, j).T
                if gxp is not None:
                    gxp[window(i, j)] += (wk[i, j].T @ g2).reshape(C, N, Ho, Wo)
        gx = None
        if gxp is not None:
            gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        return gx, gw

    return _make(out, (x, w), back)


def space_to_depth_array(x: np.ndarray, block: int = 2) -> np.ndarray:
    """``(N, C, H, W) -> (N, C*b*b, H/b, W/b)``; output channel ``c*b*b + dy*b + dx`` holds phase (dy, dx)."""
    N, C, H, W = x.shape
    if H % block or W % block:
        raise ShapeError(f"space_to_depth needs H and W divisible by {block}, got {H}x{W}")
    y = x.reshape(N, C, H // block, block, W // block, block)
    return y.transpose(0, 1, 3, 5, 2, 4).reshape(N, C * block * block, H // block, W // block)


def depth_to_space_array(y: np.ndarray, block: int = 2) -> np.ndarray:
    """Inverse of :func:`space_to_depth_array`."""
    N, Cb, h, w = y.shape
    if Cb % (block * block):
        raise ShapeError(f"depth_to_space needs channels divisible by {block * block}, got {Cb}")
    C = Cb // (block * block)
    x = y.reshape(N, C, block, block, h, w).transpose(0, 1, 4, 2, 5, 3)
    return x.reshape(N, C, h * block, w * block)


def space_to_depth(x: Tensor, block: int = 2) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"space_to_depth expects (N, C, H, W), got {x.shape}")
    out = space_to_depth_array(x.data, block)
    return _make(out, (x,), lambda g: (depth_to_space_array(g, block),))


def depth_to_space(y: Tensor, block: int = 2) -> Tensor:
    out = depth_to_space_array(y.data, block)
    return _make(out, (y,), lambda g: (space_to_depth_array(g, block),))
