"""Grad-CAM visualization of tapped features.

Channel weights are the spatial mean of d(class score)/d(feature); the
heatmap is relu(sum_c w_c * F_c), bilinearly upsampled to the input size
and min-max normalized to [0, 1]. A feature map with zero dynamic range
(e.g. constant features) yields an all-zeros heatmap.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def bilinear_resize(arr, out_h, out_w):
    """Align-corners bilinear resize of a 2-D array."""
    h, w = arr.shape
    if (h, w) == (out_h, out_w):
        return arr.copy()
    yi = np.linspace(0, h - 1, out_h) if out_h > 1 else np.zeros(1)
    xi = np.linspace(0, w - 1, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.floor(yi).astype(np.int64)
    x0 = np.floor(xi).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (yi - y0)[:, None]
    fx = (xi - x0)[None, :]
    a = arr[np.ix_(y0, x0)]
    b = arr[np.ix_(y0, x1)]
    c = arr[np.ix_(y1, x0)]
    d = arr[np.ix_(y1, x1)]
    return (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx
            + c * fy * (1 - fx) + d * fy * fx)


def gradcam_heatmap(model, tap, image, class_index):
    """Compute the (H, W) Grad-CAM heatmap in [0, 1] for one image."""
    image = np.asarray(image, dtype=np.float32)
    x = Tensor(image[None])
    logits, tapped = model.forward(x, [tap])
    feat = tapped[tap]
    onehot = np.zeros((1, model.num_classes), dtype=np.float32)
    onehot[0, class_index] = 1.0
    score = ad.tsum(ad.mul(Tensor(onehot), logits))
    gf = ad.backward(score, [feat])[feat].data[0]
    fmap = feat.data[0]
    weights = gf.mean(axis=(1, 2))
    cam = np.maximum((weights[:, None, None] * fmap).sum(axis=0), 0.0)
    up = bilinear_resize(cam, image.shape[1], image.shape[2])
    lo, hi = up.min(), up.max()
    if hi - lo < 1e-12:
        return np.zeros_like(up, dtype=np.float32)
    return ((up - lo) / (hi - lo)).astype(np.float32)


def write_pgm(path, heatmap):
    """Write a [0, 1] heatmap as 8-bit binary PGM (P5)."""
    gray = np.clip(np.round(np.asarray(heatmap) * 255.0), 0, 255).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())
