"""Numba-jitted kernels; signatures mirror numpy_kernels exactly.

Stride-1 convolution (the common case here) gets its own jit with
constant-offset contiguous inner loops so LLVM vectorizes them; a generic
strided variant covers the rest. Loops are serial and compiled once, so
accumulation order (and therefore the result) is deterministic run to run.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def _conv2d_forward_s1(xp, k):
    n = xp.shape[0]
    o, c, kh, kw = k.shape
    ho = xp.shape[2] - kh + 1
    wo = xp.shape[3] - kw + 1
    out = np.zeros((n, o, ho, wo), dtype=xp.dtype)
    for nn in range(n):
        for oo in range(o):
            for cc in range(c):
                for a in range(kh):
                    for b in range(kw):
                        kv = k[oo, cc, a, b]
                        for i in range(ho):
                            row = xp[nn, cc, i + a]
                            orow = out[nn, oo, i]
                            for j in range(wo):
                                orow[j] += kv * row[j + b]
    return out


@njit(cache=True, fastmath=True)
def _conv2d_forward_gen(xp, k, stride):
    n = xp.shape[0]
    o, c, kh, kw = k.shape
    ho = (xp.shape[2] - kh) // stride + 1
    wo = (xp.shape[3] - kw) // stride + 1
    out = np.zeros((n, o, ho, wo), dtype=xp.dtype)
    for nn in range(n):
        for oo in range(o):
            for cc in range(c):
                for a in range(kh):
                    for b in range(kw):
                        kv = k[oo, cc, a, b]
                        for i in range(ho):
                            row = xp[nn, cc, i * stride + a]
                            orow = out[nn, oo, i]
                            for j in range(wo):
                                orow[j] += kv * row[j * stride + b]
    return out


def conv2d_forward(xp, k, stride):
    if stride == 1:
        return _conv2d_forward_s1(xp, k)
    return _conv2d_forward_gen(xp, k, stride)


@njit(cache=True, fastmath=True)
def _conv2d_backward_s1(xp, k, gy):
    n = xp.shape[0]
    o, c, kh, kw = k.shape
    ho = gy.shape[2]
    wo = gy.shape[3]
    gxp = np.zeros_like(xp)
    gk = np.zeros_like(k)
    for nn in range(n):
        for oo in range(o):
            for cc in range(c):
                for a in range(kh):
                    for b in range(kw):
                        kv = k[oo, cc, a, b]
                        acc = gk[oo, cc, a, b]
                        for i in range(ho):
                            grow = gy[nn, oo, i]
                            xrow = xp[nn, cc, i + a]
                            gxrow = gxp[nn, cc, i + a]
                            for j in range(wo):
                                g = grow[j]
                                gxrow[j + b] += g * kv
                                acc += g * xrow[j + b]
                        gk[oo, cc, a, b] = acc
    return gxp, gk


@njit(cache=True, fastmath=True)
def _conv2d_backward_gen(xp, k, gy, stride):
    n = xp.shape[0]
    o, c, kh, kw = k.shape
    ho = gy.shape[2]
    wo = gy.shape[3]
    gxp = np.zeros_like(xp)
    gk = np.zeros_like(k)
    for nn in range(n):
        for oo in range(o):
            for cc in range(c):
                for a in range(kh):
                    for b in range(kw):
                        kv = k[oo, cc, a, b]
                        acc = gk[oo, cc, a, b]
                        for i in range(ho):
                            grow = gy[nn, oo, i]
                            xrow = xp[nn, cc, i * stride + a]
                            gxrow = gxp[nn, cc, i * stride + a]
                            for j in range(wo):
                                g = grow[j]
                                gxrow[j * stride + b] += g * kv
                                acc += g * xrow[j * stride + b]
                        gk[oo, cc, a, b] = acc
    return gxp, gk


def conv2d_backward(xp, k, gy, stride):
    if stride == 1:
        return _conv2d_backward_s1(xp, k, gy)
    return _conv2d_backward_gen(xp, k, gy, stride)


@njit(cache=True)
def maxpool_forward(x, window, stride):
    n, c, h, w = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = np.empty((n, c, ho, wo), dtype=x.dtype)
    idx = np.empty((n, c, ho, wo), dtype=np.int64)
    for nn in range(n):
        for cc in range(c):
            for i in range(ho):
                for j in range(wo):
                    bi = i * stride
                    bj = j * stride
                    best = x[nn, cc, bi, bj]
                    bidx = bi * w + bj
                    for a in range(window):
                        for b in range(window):
                            v = x[nn, cc, bi + a, bj + b]
                            if v > best:
                                best = v
                                bidx = (bi + a) * w + (bj + b)
                    out[nn, cc, i, j] = best
                    idx[nn, cc, i, j] = bidx
    return out, idx


@njit(cache=True)
def maxpool_backward(gy, idx, h, w):
    n, c, ho, wo = gy.shape
    gx = np.zeros((n, c, h, w), dtype=gy.dtype)
    for nn in range(n):
        for cc in range(c):
            for i in range(ho):
                for j in range(wo):
                    f = idx[nn, cc, i, j]
                    gx[nn, cc, f // w, f % w] += gy[nn, cc, i, j]
    return gx
