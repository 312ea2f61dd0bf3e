"""Small convolutional model zoo with named layers and feature taps.

Three architectures with deliberately different depth/width profiles:

  netA - 4 conv blocks + dense head (middle tap: "conv3")
  netB - 6 narrow conv layers, deeper (middle tap: "conv4")
  netC - 3 wide conv layers + 2 dense layers (middle tap: "conv2")

Weights round-trip through a little binary container (magic "FSTW").
Models are immutable once built; train() returns a new ModelGraph.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import (
    BadMagicError,
    FmattackError,
    ShapeMismatchError,
    TapNotFoundError,
    TrailingDataError,
    TruncatedFileError,
    VersionMismatchError,
    WeightShapeError,
)

ARCH_IDS = ("netA", "netB", "netC")

# documented middle-layer tap per architecture
DEFAULT_TAPS = {"netA": "conv3", "netB": "conv4", "netC": "conv2"}

# layer combinations exercised by the layer sweep, shallow/middle/deep mixes
TAP_COMBOS = {
    "netA": [("conv2", "conv3"), ("conv1", "conv4"), ("conv3", "conv4"),
             ("conv1", "conv2", "conv3")],
    "netB": [("conv3", "conv4"), ("conv1", "conv6"), ("conv2", "conv5"),
             ("conv2", "conv4", "conv6")],
    "netC": [("conv1", "conv2"), ("conv2", "conv3"), ("conv1", "conv3"),
             ("conv1", "conv2", "conv3")],
}


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: str = "same"


@dataclass(frozen=True)
class ReluSpec:
    pass


@dataclass(frozen=True)
class PoolSpec:
    window: int = 2
    stride: int = 2
    kind: str = "max"  # "max" or "avg"


@dataclass(frozen=True)
class FlattenSpec:
    pass


@dataclass(frozen=True)
class DenseSpec:
    out_features: int


@dataclass(frozen=True)
class FeatureTap:
    layer_name: str


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 6
    batch_size: int = 64
    learning_rate: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-2
    noise_augment: float = 0.0
    adversarial: bool = False
    adv_epsilon: float = None
    adv_steps: int = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.noise_augment < 0:
            raise ValueError("noise_augment must be non-negative")
        if self.adversarial:
            if not self.adv_epsilon or self.adv_epsilon <= 0 or not self.adv_steps:
                raise ValueError("adversarial training requires positive adv_epsilon and adv_steps")
        elif self.adv_epsilon is not None or self.adv_steps is not None:
            raise ValueError("adv_epsilon/adv_steps are only valid with adversarial=True")


class ModelGraph:
    """Layered feed-forward classifier with named layers."""

    def __init__(self, name, arch_id, layers, parameters, num_classes, input_shape):
        names = [n for n, _ in layers]
        if len(set(names)) != len(names):
            raise FmattackError(f"duplicate layer names in model {name!r}")
        self.name = name
        self.arch_id = arch_id
        self.layers = tuple(layers)
        self.parameters = dict(parameters)
        self.num_classes = int(num_classes)
        self.input_shape = tuple(input_shape)
        self._validate_shapes()

    def _validate_shapes(self):
        shape = self.input_shape
        for lname, spec in self.layers:
            if isinstance(spec, ConvSpec):
                c, h, w = shape
                k = self.parameters[f"{lname}.w"]
                if k.shape != (spec.out_channels, c, spec.kernel, spec.kernel):
                    raise WeightShapeError(
                        f"layer {lname}: kernel shape {k.shape} does not match spec"
                    )
                if spec.padding == "same":
                    h2 = -(-h // spec.stride)
                    w2 = -(-w // spec.stride)
                else:
                    h2 = (h - spec.kernel) // spec.stride + 1
                    w2 = (w - spec.kernel) // spec.stride + 1
                shape = (spec.out_channels, h2, w2)
            elif isinstance(spec, PoolSpec):
                c, h, w = shape
                shape = (c, (h - spec.window) // spec.stride + 1,
                         (w - spec.window) // spec.stride + 1)
            elif isinstance(spec, FlattenSpec):
                shape = (int(np.prod(shape)),)
            elif isinstance(spec, DenseSpec):
                w = self.parameters[f"{lname}.w"]
                if len(shape) != 1 or w.shape != (shape[0], spec.out_features):
                    raise WeightShapeError(
                        f"layer {lname}: dense weight {w.shape} does not match input {shape}"
                    )
                shape = (spec.out_features,)
        if shape != (self.num_classes,):
            raise WeightShapeError(
                f"model {self.name!r} output shape {shape} != ({self.num_classes},)"
            )

    @property
    def layer_names(self):
        return [n for n, _ in self.layers]

    @property
    def tap_names(self):
        """Names of layers whose activation can be tapped (conv layers)."""
        return [n for n, s in self.layers if isinstance(s, ConvSpec)]

    def forward(self, x, taps=()):
        """Run a taped forward pass.

        x: Tensor of shape (N, C, H, W). Returns (logits, {tap: activation}).
        Tapped activations are the post-relu conv outputs, so a tap is
        transparent: it never changes the logits.
        """
        tap_set = set(t.layer_name if isinstance(t, FeatureTap) else t for t in taps)
        unknown = tap_set - set(self.layer_names)
        if unknown:
            raise TapNotFoundError(sorted(unknown)[0], self.name, self.tap_names)
        # a tapped conv records its post-relu activation when a relu follows
        record_after = {}
        for i, (lname, spec) in enumerate(self.layers):
            if lname not in tap_set:
                continue
            j = i
            if isinstance(spec, ConvSpec) and i + 1 < len(self.layers) \
                    and isinstance(self.layers[i + 1][1], ReluSpec):
                j = i + 1
            record_after[j] = lname
        h = x
        tapped = {}
        for i, (lname, spec) in enumerate(self.layers):
            if isinstance(spec, ConvSpec):
                h = ad.conv2d(h, self.parameters[f"{lname}.w"],
                              self.parameters[f"{lname}.b"],
                              stride=spec.stride, padding=spec.padding)
            elif isinstance(spec, ReluSpec):
                h = ad.relu(h)
            elif isinstance(spec, PoolSpec):
                if spec.kind == "avg":
                    h = ad.avgpool2d(h, spec.window)
                else:
                    h = ad.maxpool2d(h, spec.window, spec.stride)
            elif isinstance(spec, FlattenSpec):
                h = ad.flatten(h)
            elif isinstance(spec, DenseSpec):
                h = ad.dense(h, self.parameters[f"{lname}.w"],
                             self.parameters[f"{lname}.b"])
            if i in record_after:
                tapped[record_after[i]] = h
        return h, tapped

    def logits(self, images):
        """Untaped convenience forward over a (N, C, H, W) array."""
        out, _ = self.forward(ad.Tensor(np.asarray(images, dtype=np.float32)))
        return out.data

    def predict(self, images):
        return self.logits(images).argmax(axis=1)

    def accuracy(self, images, labels, batch_size=256):
        images = np.asarray(images)
        labels = np.asarray(labels)
        hits = 0
        for i in range(0, len(images), batch_size):
            hits += (self.predict(images[i : i + batch_size]) == labels[i : i + batch_size]).sum()
        return hits / len(labels)

    def with_parameters(self, parameters, name=None):
        return ModelGraph(name or self.name, self.arch_id, self.layers, parameters,
                          self.num_classes, self.input_shape)


def _arch_layers(arch_id, num_classes, input_shape):
    c, h, w = input_shape
    if arch_id == "netA":
        return [
            ("conv1", ConvSpec(8)), ("relu1", ReluSpec()), ("pool1", PoolSpec()),
            ("conv2", ConvSpec(16)), ("relu2", ReluSpec()),
            ("conv3", ConvSpec(16)), ("relu3", ReluSpec()), ("pool2", PoolSpec()),
            ("conv4", ConvSpec(32)), ("relu4", ReluSpec()),
            ("flatten", FlattenSpec()),
            ("fc", DenseSpec(num_classes)),
        ]
    if arch_id == "netB":
        return [
            ("conv1", ConvSpec(6)), ("relu1", ReluSpec()),
            ("conv2", ConvSpec(8)), ("relu2", ReluSpec()), ("pool1", PoolSpec(kind="avg")),
            ("conv3", ConvSpec(8)), ("relu3", ReluSpec()),
            ("conv4", ConvSpec(12)), ("relu4", ReluSpec()), ("pool2", PoolSpec(kind="avg")),
            ("conv5", ConvSpec(12)), ("relu5", ReluSpec()),
            ("conv6", ConvSpec(16)), ("relu6", ReluSpec()),
            ("flatten", FlattenSpec()),
            ("fc", DenseSpec(num_classes)),
        ]
    if arch_id == "netC":
        return [
            ("conv1", ConvSpec(16, kernel=5)), ("relu1", ReluSpec()), ("pool1", PoolSpec(kind="avg")),
            ("conv2", ConvSpec(24)), ("relu2", ReluSpec()), ("pool2", PoolSpec(kind="avg")),
            ("conv3", ConvSpec(32)), ("relu3", ReluSpec()),
            ("flatten", FlattenSpec()),
            ("fc1", DenseSpec(48)), ("relu4", ReluSpec()),
            ("fc2", DenseSpec(num_classes)),
        ]
    raise FmattackError(f"unknown architecture {arch_id!r}; expected one of {ARCH_IDS}")


def build_model(arch_id, num_classes, input_shape, seed=0, name=None):
    """Construct a freshly initialised model (He init, deterministic per seed)."""
    layers = _arch_layers(arch_id, num_classes, input_shape)
    rng = np.random.default_rng([seed, ARCH_IDS.index(arch_id) if arch_id in ARCH_IDS else 0])
    params = {}
    shape = tuple(input_shape)
    for lname, spec in layers:
        if isinstance(spec, ConvSpec):
            c = shape[0]
            fan_in = c * spec.kernel * spec.kernel
            params[f"{lname}.w"] = ad.Tensor(
                rng.normal(0.0, np.sqrt(2.0 / fan_in),
                           (spec.out_channels, c, spec.kernel, spec.kernel)).astype(np.float32))
            params[f"{lname}.b"] = ad.Tensor(np.zeros(spec.out_channels, dtype=np.float32))
            h2 = -(-shape[1] // spec.stride) if spec.padding == "same" else \
                (shape[1] - spec.kernel) // spec.stride + 1
            w2 = -(-shape[2] // spec.stride) if spec.padding == "same" else \
                (shape[2] - spec.kernel) // spec.stride + 1
            shape = (spec.out_channels, h2, w2)
        elif isinstance(spec, PoolSpec):
            shape = (shape[0], (shape[1] - spec.window) // spec.stride + 1,
                     (shape[2] - spec.window) // spec.stride + 1)
        elif isinstance(spec, FlattenSpec):
            shape = (int(np.prod(shape)),)
        elif isinstance(spec, DenseSpec):
            fan_in = shape[0]
            params[f"{lname}.w"] = ad.Tensor(
                rng.normal(0.0, np.sqrt(2.0 / fan_in),
                           (fan_in, spec.out_features)).astype(np.float32))
            params[f"{lname}.b"] = ad.Tensor(np.zeros(spec.out_features, dtype=np.float32))
            shape = (spec.out_features,)
    return ModelGraph(name or arch_id, arch_id, layers, params, num_classes, input_shape)


# ---------------------------------------------------------------------------
# training


def _pgd_batch(model, params, images, labels, epsilon, steps):
    """Craft PGD adversarial copies of a batch under the current parameters."""
    live = model.with_parameters(params)
    adv = images.copy()
    step = epsilon / steps
    for _ in range(steps):
        x = ad.Tensor(adv)
        logits, _ = live.forward(x)
        loss = ad.softmax_cross_entropy(logits, labels)
        g = ad.backward(loss, [x])[x].data
        adv = adv + step * np.sign(g)
        adv = np.clip(adv, images - epsilon, images + epsilon)
        adv = np.clip(adv, 0.0, 1.0).astype(np.float32)
    return adv


def train(model, dataset, cfg):
    """SGD-with-momentum training; returns a new ModelGraph.

    With cfg.adversarial set, each step trains on the clean batch plus an
    equally sized PGD batch (L-inf ball cfg.adv_epsilon, cfg.adv_steps
    iterations of step adv_epsilon/adv_steps).  The first epoch is clean-only
    so the classifier leaves the zero-logit regime before it starts seeing
    boundary examples; without the warm-up, narrow deep stacks reliably
    collapse into the constant-output local minimum.

    With cfg.noise_augment > 0, a fixed Gaussian-noise corruption (sigma =
    cfg.noise_augment, keyed by cfg.seed) is applied to the training images
    once up front, which trades a little clean accuracy for flatter input
    sensitivity.
    """
    images = np.asarray(dataset.images, dtype=np.float32)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    if len(images) == 0:
        raise FmattackError("training dataset is empty")
    if labels.max() >= model.num_classes:
        raise FmattackError(
            f"dataset labels reach {labels.max()} but model has {model.num_classes} classes")

    if cfg.noise_augment > 0:
        noise_rng = np.random.default_rng([cfg.seed, 0x6E61])
        images = np.clip(
            images + noise_rng.normal(0.0, cfg.noise_augment, images.shape)
            .astype(np.float32), 0.0, 1.0)

    params = {k: ad.Tensor(v.data.copy()) for k, v in model.parameters.items()}
    velocity = {k: np.zeros_like(v.data) for k, v in params.items()}
    rng = np.random.default_rng([cfg.seed, 0x7261])

    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(images))
        for start in range(0, len(order), cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            bx, by = images[sel], labels[sel]
            if cfg.adversarial and _epoch > 0:
                adv = _pgd_batch(model, params, bx, by, cfg.adv_epsilon, cfg.adv_steps)
                bx = np.concatenate([bx, adv])
                by = np.concatenate([by, by])
            x = ad.Tensor(bx)
            live = model.with_parameters(params)
            logits, _ = live.forward(x)
            loss = ad.softmax_cross_entropy(logits, by)
            wrt = list(params.values())
            grads = ad.backward(loss, wrt)
            for key, p in params.items():
                g = grads[p].data + cfg.weight_decay * p.data
                velocity[key] = cfg.momentum * velocity[key] - cfg.learning_rate * g
                params[key] = ad.Tensor(p.data + velocity[key])
    return model.with_parameters(params)


# ---------------------------------------------------------------------------
# weight container:
#   magic "FSTW" | u32 LE version=1 | u32 LE tensor count
#   per tensor: u16 LE name length | name UTF-8 | u8 rank | u32 LE dims | f32 LE data

_MAGIC = b"FSTW"
_VERSION = 1
_META_NAME = "__meta__"
_ARCH_CODES = {a: i for i, a in enumerate(ARCH_IDS)}


def save_weights(model, path):
    entries = [(_META_NAME, np.array(
        [_ARCH_CODES[model.arch_id], model.num_classes, *model.input_shape],
        dtype=np.float32))]
    entries += sorted((k, v.data) for k, v in model.parameters.items())
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(entries)))
        for name, arr in entries:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"unexpected end of file while reading {what}")
    return buf


def load_weights(path, name=None):
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != _MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {_MAGIC!r}")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != _VERSION:
            raise VersionMismatchError(f"unsupported version {version}, expected {_VERSION}")
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            tname = _read_exact(fh, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
            nbytes = 4 * int(np.prod(dims, dtype=np.int64)) if rank else 4
            raw = _read_exact(fh, nbytes, f"tensor {tname!r} payload")
            tensors[tname] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
        if fh.read(1):
            raise TrailingDataError("trailing data after last tensor")
    if _META_NAME not in tensors:
        raise WeightShapeError("weight file lacks the architecture meta entry")
    meta = tensors.pop(_META_NAME)
    arch_id = ARCH_IDS[int(meta[0])]
    num_classes = int(meta[1])
    input_shape = tuple(int(v) for v in meta[2:5])
    skeleton = build_model(arch_id, num_classes, input_shape)
    expected = set(skeleton.parameters)
    if set(tensors) != expected:
        raise WeightShapeError(
            f"tensor names {sorted(tensors)} do not match architecture {arch_id}")
    for key, arr in tensors.items():
        if arr.shape != skeleton.parameters[key].shape:
            raise WeightShapeError(
                f"tensor {key!r} has shape {arr.shape}, architecture expects "
                f"{skeleton.parameters[key].shape}")
    params = {k: ad.Tensor(v) for k, v in tensors.items()}
    return skeleton.with_parameters(params, name=name or arch_id)
