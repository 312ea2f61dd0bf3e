"""Guided feature-disturbance attacks with dual momentum.

Three methods share one iterative L-inf loop:

  MIM  - loss ascent with momentum on the L1-normalized input gradient.
  FIA  - a guidance map is computed once on the clean image (the mean
         feature gradient over randomly pixel-masked copies), frozen, and
         the guided feature objective sum(beta * F) is minimized.
  FMAA - the guidance map is re-estimated every iteration and accumulated
         with momentum, so it tracks the image as it moves.

The guidance gradient is taken on the true-class log-likelihood, so a
positive map entry marks a feature element whose suppression removes
evidence for the true class; minimizing sum(beta * F) therefore disturbs
exactly the category-relevant features.

Optional transform combinators (simplified re-implementations, parameters
documented here as constants): DIM resizes-and-pads the objective input
with probability 0.7 per iteration; TIM smooths the input gradient with a
7x7 Gaussian (sigma 3); PIM re-injects the clipped step overflow into the
3x3 neighbourhood with amplification 2.5.
"""

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, l1_normalize
from .errors import (
    ConfigError,
    InvalidLabelError,
    NonFiniteGradientError,
    ShapeMismatchError,
)

METHODS = ("MIM", "FIA", "FMAA")
TRANSFORMS = ("DIM", "TIM", "PIM")

DIM_PROBABILITY = 0.7
DIM_MIN_SCALE = 0.75
TIM_KERNEL_SIZE = 7
TIM_SIGMA = 3.0
PIM_AMPLIFICATION = 2.5

_U64 = (1 << 64) - 1


def derive_seed(*parts):
    """Stable 64-bit stream key from a tuple of ints/strings."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        if isinstance(p, str):
            h.update(b"s" + p.encode("utf-8"))
        else:
            h.update(b"i" + struct.pack("<Q", int(p) & _U64))
    return int.from_bytes(h.digest(), "little")


def _rng(key, counter=0):
    return np.random.Generator(np.random.Philox(key=(key & _U64, counter & _U64)))


@dataclass(frozen=True)
class AttackConfig:
    """Full hyperparameter record for one attack run."""

    epsilon: float = 16.0 / 255.0
    steps: int = 10
    step_size: float = None  # defaults to epsilon / steps
    feature_momentum: float = 1.1
    grad_momentum: float = 1.0
    num_variants: int = 30
    drop_first: float = 0.4
    drop_rest: float = 0.1
    taps: tuple = ()
    method: str = "FMAA"
    transforms: tuple = ()
    seed: int = 42

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.step_size is None:
            object.__setattr__(self, "step_size",
                               self.epsilon / max(self.steps, 1))
        if self.step_size <= 0:
            raise ConfigError("step_size must be positive")
        if self.feature_momentum < 0 or self.grad_momentum < 0:
            raise ConfigError("momentum weights must be >= 0")
        if self.num_variants < 1:
            raise ConfigError("num_variants must be >= 1")
        for p in (self.drop_first, self.drop_rest):
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"drop probabilities must lie in [0, 1), got {p}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        object.__setattr__(self, "taps", tuple(self.taps))
        object.__setattr__(self, "transforms", tuple(self.transforms))
        for t in self.transforms:
            if t not in TRANSFORMS:
                raise ConfigError(f"unknown transform {t!r}; expected one of {TRANSFORMS}")


@dataclass
class GuidanceState:
    """Accumulated guidance maps (per model/tap) and gradient momentum."""

    betas: dict
    g: np.ndarray
    t: int = 0


@dataclass
class AttackOutcome:
    adv_image: np.ndarray
    source_white_box_success: bool
    per_iteration_objective: list
    guidance_snapshots: list = None
    raw_feature_grads: list = None


def _pixel_masks(n, p, seed, height, width, dtype):
    masks = np.empty((n, 1, height, width), dtype=dtype)
    for v in range(n):
        gen = _rng(seed, v)
        masks[v, 0] = gen.random((height, width)) >= p
    return masks


def aggregate_feature_gradient(model, tap, image, label, n, p, seed):
    """Mean gradient of the true-class log-likelihood at the tapped feature,
    over n randomly pixel-masked copies of the image.

    Masks zero each pixel independently with probability p (identical
    across channels), keyed by (seed, variant index) so any variant is
    reproducible on its own. p = 0 short-circuits to the plain gradient.
    """
    image = np.asarray(image, dtype=np.float32)
    if p == 0.0:
        batch = image[None]
    else:
        masks = _pixel_masks(n, p, seed, image.shape[1], image.shape[2], image.dtype)
        batch = image[None] * masks
    x = Tensor(batch)
    logits, tapped = model.forward(x, [tap])
    feat = tapped[tap]
    labels = np.full(len(batch), label, dtype=np.int64)
    score = ad.scale(ad.softmax_cross_entropy(logits, labels, reduction="sum"), -1.0)
    gf = ad.backward(score, [feat])[feat].data
    if p == 0.0:
        return gf[0]
    return gf.sum(axis=0) / np.float32(n)


def update_feature_momentum(beta, raw_grad, weight):
    """One guidance-map recurrence step: weight * beta + l1_normalize(raw_grad)."""
    beta = np.asarray(beta)
    raw_grad = np.asarray(raw_grad)
    if beta.shape != raw_grad.shape:
        raise ShapeMismatchError("feature momentum vs raw gradient", beta.shape, raw_grad.shape)
    return (np.float32(weight) * beta + l1_normalize(raw_grad)).astype(np.float32)


def feature_objective(beta, feature):
    """Guided feature objective sum(beta * F), differentiable through F."""
    beta_data = beta.data if isinstance(beta, Tensor) else np.asarray(beta)
    if beta_data.shape != feature.shape[1:] and beta_data.shape != feature.shape:
        raise ShapeMismatchError("guidance map vs feature", beta_data.shape, feature.shape)
    return ad.tsum(ad.mul(Tensor(beta_data), feature))


# ---------------------------------------------------------------------------
# transform combinators


def _gauss_kernel(size, sigma, dtype):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return (k / k.sum()).astype(dtype)


def _depthwise_same_conv(arr, kernel2d):
    """Convolve each channel of (C, H, W) with one 2-D kernel, same padding."""
    from . import kernels

    c, h, w = arr.shape
    ks = kernel2d.shape[0]
    pad = ks // 2
    xp = np.pad(arr[:, None], ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    k = kernel2d[None, None].astype(arr.dtype)
    out = kernels.conv2d_forward(np.ascontiguousarray(xp), k, 1)
    return out[:, 0]


def _dim_params(shape, t, seed):
    """Random resize-and-pad parameters for iteration t, or None (p=0.3)."""
    gen = _rng(derive_seed(seed, "dim", t))
    if gen.random() >= DIM_PROBABILITY:
        return None
    _, h, w = shape
    new_h = int(gen.integers(max(1, int(h * DIM_MIN_SCALE)), h + 1))
    new_w = int(gen.integers(max(1, int(w * DIM_MIN_SCALE)), w + 1))
    top = int(gen.integers(0, h - new_h + 1))
    left = int(gen.integers(0, w - new_w + 1))
    if (new_h, new_w) == (h, w):
        return None
    return new_h, new_w, top, left


def _resolve_taps(models, cfg):
    """Map config tap strings onto each source model.

    Entries are either plain layer names (single source only) or
    "model_name:layer" (required for ensembles).
    """
    per_model = [[] for _ in models]
    if cfg.method == "MIM":
        return per_model
    if not cfg.taps:
        raise ConfigError(f"method {cfg.method} requires at least one feature tap")
    names = [m.name for m in models]
    for entry in cfg.taps:
        if ":" in entry:
            mname, layer = entry.split(":", 1)
            if mname not in names:
                raise ConfigError(f"tap {entry!r} names unknown model {mname!r}")
            per_model[names.index(mname)].append(layer)
        else:
            if len(models) > 1:
                raise ConfigError(
                    f"tap {entry!r} must be qualified as model:layer for ensemble sources")
            per_model[0].append(entry)
    for m, taps in zip(models, per_model):
        if not taps:
            raise ConfigError(f"no tap configured for source model {m.name!r}")
    return per_model


def run_attack(models, image, label, cfg, record_guidance=False):
    """Craft one adversarial image per the configured method.

    models: a ModelGraph or a sequence of them (ensemble source; the
    objective is the unweighted mean over models). Returns an
    AttackOutcome whose adv_image satisfies the L-inf budget and [0, 1]
    pixel range by construction.
    """
    if not isinstance(models, (list, tuple)):
        models = [models]
    clean = np.asarray(image, dtype=np.float32)
    if clean.min() < 0.0 or clean.max() > 1.0:
        raise ValueError("image pixels must lie in [0, 1]")
    num_classes = models[0].num_classes
    if not 0 <= label < num_classes:
        raise InvalidLabelError(f"label {label} out of range [0, {num_classes})")
    taps_per_model = _resolve_taps(models, cfg)

    lo = np.clip(clean - cfg.epsilon, 0.0, 1.0).astype(np.float32)
    hi = np.clip(clean + cfg.epsilon, 0.0, 1.0).astype(np.float32)

    x = clean.copy()
    state = GuidanceState(betas={}, g=np.zeros_like(clean), t=0)
    objective_trace = []
    snapshots = [] if record_guidance else None
    raw_grads = [] if record_guidance else None

    if cfg.method in ("FIA", "FMAA"):
        for mi, model in enumerate(models):
            _, tapped = model.forward(Tensor(clean[None]), taps_per_model[mi])
            for tap in taps_per_model[mi]:
                state.betas[(mi, tap)] = np.zeros(tapped[tap].shape[1:], dtype=np.float32)

    tim_kernel = _gauss_kernel(TIM_KERNEL_SIZE, TIM_SIGMA, clean.dtype) \
        if "TIM" in cfg.transforms else None
    pim_kernel = (np.ones((3, 3), dtype=clean.dtype) / 9.0) \
        if "PIM" in cfg.transforms else None

    for t in range(cfg.steps):
        p = cfg.drop_first if t == 0 else cfg.drop_rest

        # (1) guidance maps
        if cfg.method == "FMAA" or (cfg.method == "FIA" and t == 0):
            guide_input = clean if cfg.method == "FIA" else x
            raw_step = {}
            for mi, model in enumerate(models):
                for tap in taps_per_model[mi]:
                    raw = aggregate_feature_gradient(
                        model, tap, guide_input, label, cfg.num_variants, p,
                        derive_seed(cfg.seed, "mask", t, mi, tap))
                    raw_step[(mi, tap)] = raw
                    lam = 0.0 if cfg.method == "FIA" else cfg.feature_momentum
                    state.betas[(mi, tap)] = update_feature_momentum(
                        state.betas[(mi, tap)], raw, lam)
            if record_guidance:
                raw_grads.append({k: v.copy() for k, v in raw_step.items()})

        if record_guidance and cfg.method in ("FIA", "FMAA"):
            snapshots.append({k: v.copy() for k, v in state.betas.items()})

        # (2) objective pass and input gradient
        xt = Tensor(x[None])
        x_in = xt
        if "DIM" in cfg.transforms:
            params = _dim_params(clean.shape, t, cfg.seed)
            if params is not None:
                x_in = ad.nearest_resize_pad(xt, *params)
        per_model_objectives = []
        for mi, model in enumerate(models):
            logits, tapped = model.forward(x_in, taps_per_model[mi])
            if cfg.method == "MIM":
                per_model_objectives.append(
                    ad.softmax_cross_entropy(logits, np.array([label]), reduction="sum"))
            else:
                tap_terms = [feature_objective(state.betas[(mi, tap)], tapped[tap])
                             for tap in taps_per_model[mi]]
                obj = tap_terms[0]
                for term in tap_terms[1:]:
                    obj = ad.add(obj, term)
                per_model_objectives.append(obj)
        objective = per_model_objectives[0]
        for term in per_model_objectives[1:]:
            objective = ad.add(objective, term)
        if len(models) > 1:
            objective = ad.scale(objective, 1.0 / len(models))
        grad_x = ad.backward(objective, [xt])[xt].data[0]
        if not np.isfinite(grad_x).all():
            raise NonFiniteGradientError(f"non-finite input gradient at iteration {t}")
        objective_trace.append(float(objective.item()))

        # (3) gradient momentum and signed step
        if tim_kernel is not None:
            grad_x = _depthwise_same_conv(grad_x, tim_kernel)
        state.g = cfg.grad_momentum * state.g + l1_normalize(grad_x)
        direction = 1.0 if cfg.method == "MIM" else -1.0
        step = direction * cfg.step_size * np.sign(state.g, dtype=np.float32)
        proposed = x + step
        x_new = np.clip(proposed, lo, hi)
        if pim_kernel is not None:
            overflow = proposed - x_new
            x_new = np.clip(
                x_new + PIM_AMPLIFICATION * _depthwise_same_conv(overflow, pim_kernel),
                lo, hi)
        x = x_new.astype(np.float32)
        state.t = t + 1

    success = all(m.predict(x[None])[0] != label for m in models)
    return AttackOutcome(
        adv_image=x,
        source_white_box_success=bool(success),
        per_iteration_objective=objective_trace,
        guidance_snapshots=snapshots,
        raw_feature_grads=raw_grads,
    )
