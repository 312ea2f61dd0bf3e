"""Dataset ingestion (IDX byte format) and a synthetic desk-scale corpus.

The toolkit trains and evaluates on a 10-class 16x16 grayscale glyph set
generated procedurally (shapes with position jitter, intensity scaling and
pixel noise), stored in the standard IDX format so real IDX files drop in
unchanged.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DatasetFormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    split: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DatasetFormatError(
                f"image count {len(self.images)} != label count {len(self.labels)}")

    def __len__(self):
        return len(self.labels)

    def subset(self, indices, split=None):
        return Dataset(self.images[indices], self.labels[indices],
                       split if split is not None else self.split)


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise DatasetFormatError(f"unexpected end of file while reading {what}")
    return buf


def _load_idx(path, magic, rank, what):
    with open(path, "rb") as fh:
        (got,) = struct.unpack(">I", _read_exact(fh, 4, "magic"))
        if got != magic:
            raise DatasetFormatError(
                f"bad magic 0x{got:08x} in {what} file, expected 0x{magic:08x}")
        dims = struct.unpack(f">{rank}I", _read_exact(fh, 4 * rank, "dimensions"))
        n = int(np.prod(dims, dtype=np.int64))
        payload = _read_exact(fh, n, f"{what} payload")
        if fh.read(1):
            raise DatasetFormatError(f"trailing data after {what} payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_dataset(images_path, labels_path, split=""):
    """Load an IDX image/label file pair; pixels scaled to [0, 1] by /255."""
    raw = _load_idx(images_path, IMAGES_MAGIC, 3, "images")
    labels = _load_idx(labels_path, LABELS_MAGIC, 1, "labels")
    if raw.shape[0] != labels.shape[0]:
        raise DatasetFormatError(
            f"count mismatch: {raw.shape[0]} images vs {labels.shape[0]} labels")
    images = (raw.astype(np.float32) / 255.0)[:, None, :, :]
    return Dataset(images, labels.astype(np.int64), split)


def save_dataset(dataset, images_path, labels_path):
    images = np.asarray(dataset.images)
    if images.ndim != 4 or images.shape[1] != 1:
        raise DatasetFormatError("only single-channel image tensors can be written as IDX")
    raw = np.clip(np.round(images[:, 0] * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, *raw.shape))
        fh.write(raw.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, len(dataset.labels)))
        fh.write(np.asarray(dataset.labels, dtype=np.uint8).tobytes())


# ---------------------------------------------------------------------------
# synthetic glyph corpus

NUM_CLASSES = 10


def _glyph(cls, size, cx, cy, yy, xx):
    r = np.hypot(yy - cy, xx - cx)
    if cls == 0:  # ring
        return np.abs(r - size * 0.28) < 1.1
    if cls == 1:  # vertical bar
        return (np.abs(xx - cx) < 1.2) & (np.abs(yy - cy) < size * 0.34)
    if cls == 2:  # horizontal bar
        return (np.abs(yy - cy) < 1.2) & (np.abs(xx - cx) < size * 0.34)
    if cls == 3:  # main diagonal
        return (np.abs((yy - cy) - (xx - cx)) < 1.3) & (r < size * 0.38)
    if cls == 4:  # anti-diagonal
        return (np.abs((yy - cy) + (xx - cx)) < 1.3) & (r < size * 0.38)
    if cls == 5:  # plus
        return ((np.abs(xx - cx) < 1.1) | (np.abs(yy - cy) < 1.1)) & (r < size * 0.36)
    if cls == 6:  # X
        return ((np.abs((yy - cy) - (xx - cx)) < 1.2) |
                (np.abs((yy - cy) + (xx - cx)) < 1.2)) & (r < size * 0.36)
    if cls == 7:  # square outline
        side = size * 0.3
        box = (np.abs(yy - cy) < side) & (np.abs(xx - cx) < side)
        inner = (np.abs(yy - cy) < side - 1.6) & (np.abs(xx - cx) < side - 1.6)
        return box & ~inner
    if cls == 8:  # filled disk
        return r < size * 0.2
    # 9: T shape
    top = (np.abs(yy - (cy - size * 0.25)) < 1.1) & (np.abs(xx - cx) < size * 0.3)
    stem = (np.abs(xx - cx) < 1.1) & (yy > cy - size * 0.25) & (yy < cy + size * 0.33)
    return top | stem


def synthesize(num_samples, size=16, seed=0, split=""):
    """Generate a balanced 10-class glyph dataset with jitter and noise."""
    rng = np.random.default_rng([seed, 0x67DA])
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    images = np.empty((num_samples, 1, size, size), dtype=np.float32)
    labels = np.empty(num_samples, dtype=np.int64)
    jitter = max(1, size // 8)
    for i in range(num_samples):
        cls = i % NUM_CLASSES
        cx = size / 2 - 0.5 + rng.integers(-jitter, jitter + 1)
        cy = size / 2 - 0.5 + rng.integers(-jitter, jitter + 1)
        intensity = rng.uniform(0.144, 0.32)
        canvas = _glyph(cls, size, cx, cy, yy, xx).astype(np.float32) * intensity
        canvas += rng.normal(0.0, 0.08, (size, size)).astype(np.float32)
        images[i, 0] = np.clip(canvas, 0.0, 1.0)
        labels[i] = cls
    order = rng.permutation(num_samples)
    return Dataset(images[order], labels[order], split)
