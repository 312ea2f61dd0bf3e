"""Pure-numpy fallback kernels (im2col convolution, strided pooling).

All convolution kernels operate on pre-padded inputs and perform plain
cross-correlation with integer stride. Shapes are batched NCHW.
"""

import numpy as np


def _windows(xp, kh, kw, stride):
    # (N, C, Ho, Wo, kh, kw) view, no copy
    n, c, hp, wp = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, ho, wo, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def conv2d_forward(xp, k, stride):
    n = xp.shape[0]
    o, c, kh, kw = k.shape
    win = _windows(xp, kh, kw, stride)
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = cols @ k.reshape(o, c * kh * kw).T
    return np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))


def conv2d_backward(xp, k, gy, stride):
    n, c, hp, wp = xp.shape
    o, _, kh, kw = k.shape
    ho, wo = gy.shape[2], gy.shape[3]

    gy_cols = gy.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)

    win = _windows(xp, kh, kw, stride)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    gk = (gy_cols.T @ cols).reshape(o, c, kh, kw)

    gcols = (gy_cols @ k.reshape(o, c * kh * kw)).reshape(n, ho, wo, c, kh, kw)
    gcols = gcols.transpose(0, 3, 4, 5, 1, 2)  # (N, C, kh, kw, Ho, Wo)
    gxp = np.zeros_like(xp)
    he = ho * stride
    we = wo * stride
    for a in range(kh):
        for b in range(kw):
            gxp[:, :, a : a + he : stride, b : b + we : stride] += gcols[:, :, a, b]
    return gxp, gk


def maxpool_forward(x, window, stride):
    n, c, h, w = x.shape
    win = _windows(x, window, window, stride)
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, ho, wo, window * window)
    local = flat.argmax(axis=4)
    out = np.take_along_axis(flat, local[..., None], axis=4)[..., 0]
    # convert window-local argmax to flat (row*W + col) index in the input map
    rows = (np.arange(ho) * stride)[None, None, :, None] + local // window
    cols = (np.arange(wo) * stride)[None, None, None, :] + local % window
    idx = (rows * w + cols).astype(np.int64)
    return np.ascontiguousarray(out), idx


def maxpool_backward(gy, idx, h, w):
    n, c = gy.shape[0], gy.shape[1]
    gx = np.zeros((n, c, h * w), dtype=gy.dtype)
    flat_idx = idx.reshape(n, c, -1)
    np.add.at(gx, (np.arange(n)[:, None, None], np.arange(c)[None, :, None], flat_idx),
              gy.reshape(n, c, -1))
    return gx.reshape(n, c, h, w)
