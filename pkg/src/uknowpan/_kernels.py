"""Compiled inner loops for the few ops that dominate training time.

Each kernel has a plain numpy counterpart in the calling module's tests; the
kernels only fuse loops, they do not change the arithmetic.
"""

from __future__ import annotations

import numba
import numpy as np

_jit = numba.njit(cache=True, fastmath=False, nogil=True)


@_jit
def dw3x3_forward(xp, w, b, stride, ho, wo):
    if stride == 1:
        return _dw3x3_forward_s1(xp, w, b, ho, wo)
    n, c = xp.shape[0], xp.shape[1]
    out = np.empty((n, c, ho, wo), dtype=xp.dtype)
    for ni in range(n):
        for ci in range(c):
            src = xp[ni, ci]
            for oy in range(ho):
                for ox in range(wo):
                    acc = b[ci]
                    for i in range(3):
                        for j in range(3):
                            acc += w[ci, i, j] * src[oy * stride + i, ox * stride + j]
                    out[ni, ci, oy, ox] = acc
    return out


@_jit
def _dw3x3_forward_s1(xp, w, b, ho, wo):
    n, c = xp.shape[0], xp.shape[1]
    out = np.empty((n, c, ho, wo), dtype=xp.dtype)
    for ni in range(n):
        for ci in range(c):
            src = xp[ni, ci]
            dst = out[ni, ci]
            for oy in range(ho):
                d = dst[oy]
                for ox in range(wo):
                    d[ox] = b[ci]
                for i in range(3):
                    r = src[oy + i]
                    for j in range(3):
                        wij = w[ci, i, j]
                        for ox in range(wo):
                            d[ox] += wij * r[ox + j]
    return out


@_jit
def dw3x3_grad_weight(g, xp, stride):
    if stride == 1:
        return _dw3x3_grad_weight_s1(g, xp)
    n, c, ho, wo = g.shape
    gw = np.zeros((c, 3, 3), dtype=np.float64)
    lane = np.empty(wo, dtype=g.dtype)
    for ci in range(c):
        for i in range(3):
            for j in range(3):
                lane[:] = 0
                for ni in range(n):
                    src = xp[ni, ci]
                    grad = g[ni, ci]
                    for oy in range(ho):
                        row = src[oy * stride + i]
                        grow = grad[oy]
                        for ox in range(wo):
                            lane[ox] += grow[ox] * row[ox * stride + j]
                total = 0.0
                for ox in range(wo):
                    total += lane[ox]
                gw[ci, i, j] = total
    return gw


@_jit
def _dw3x3_grad_weight_s1(g, xp):
    n, c, ho, wo = g.shape
    gw = np.zeros((c, 3, 3), dtype=np.float64)
    lane = np.empty((3, 3, wo), dtype=g.dtype)
    for ci in range(c):
        lane[:] = 0
        for ni in range(n):
            src = xp[ni, ci]
            grad = g[ni, ci]
            for oy in range(ho):
                grow = grad[oy]
                for i in range(3):
                    row = src[oy + i]
                    for j in range(3):
                        acc = lane[i, j]
                        for ox in range(wo):
                            acc[ox] += grow[ox] * row[ox + j]
        for i in range(3):
            for j in range(3):
                total = 0.0
                for ox in range(wo):
                    total += lane[i, j, ox]
                gw[ci, i, j] = total
    return gw


@_jit
def dw3x3_grad_input_strided(g, w, stride, hp, wp):
    n, c, ho, wo = g.shape
    gxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
    for ni in range(n):
        for ci in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    gv = g[ni, ci, oy, ox]
                    for i in range(3):
                        for j in range(3):
                            gxp[ni, ci, oy * stride + i, ox * stride + j] += gv * w[ci, i, j]
    return gxp


@_jit
def fft_rows(x, twiddles, rev):
    """In-place radix-2 DIT FFT of every row of a 2D complex array.

    ``twiddles`` holds ``exp(-+2 pi i k / n)`` for ``k < n/2``; ``rev`` is the
    bit-reversal permutation of ``range(n)``.
    """
    rows, n = x.shape
    buf = np.empty(n, dtype=x.dtype)
    for r in range(rows):
        row = x[r]
        for k in range(n):
            buf[k] = row[rev[k]]
        m = 2
        while m <= n:
            half = m // 2
            step = n // m
            for start in range(0, n, m):
                for k in range(half):
                    t = twiddles[k * step] * buf[start + k + half]
                    u = buf[start + k]
                    buf[start + k] = u + t
                    buf[start + k + half] = u - t
            m *= 2
        for k in range(n):
            row[k] = buf[k]
    return x


@_jit
def gelu_tanh_grad(x, th, g, c, k):
    out = np.empty_like(x)
    xf, tf, gf, of = x.ravel(), th.ravel(), g.ravel(), out.ravel()
    for i in range(xf.size):
        xi = xf[i]
        ti = tf[i]
        of[i] = gf[i] * (0.5 * (1.0 + ti) + 0.5 * xi * (1.0 - ti * ti) * c * (1.0 + 3.0 * k * xi * xi))
    return out
