"""Feature-momentum adversarial attack toolkit.

A small, self-contained stack for studying transferable adversarial
examples: a reverse-mode autodiff tensor core, a compact CNN model zoo,
an iterative attack engine with dual (gradient + feature) momentum, and
a benchmark harness that measures transfer success rates.
"""

from .attack import (
    METHODS,
    TRANSFORMS,
    AttackConfig,
    AttackOutcome,
    GuidanceState,
    aggregate_feature_gradient,
    derive_seed,
    feature_objective,
    run_attack,
    update_feature_momentum,
)
from .autodiff import (
    GradRequest,
    Tensor,
    add,
    backward,
    conv2d,
    dense,
    flatten,
    grad,
    l1_normalize,
    avgpool2d,
    maxpool2d,
    mul,
    nearest_resize_pad,
    relu,
    scale,
    softmax_cross_entropy,
    tsum,
)
from .backend import get_backend, set_backend
from .bench import (
    BenchCell,
    BenchmarkReport,
    SweepResult,
    evaluate_transfer,
    run_benchmark,
    run_sweep,
    select_eval_subset,
)
from .config import ExperimentConfig, load_config
from .data import Dataset, load_dataset, save_dataset, synthesize
from .errors import (
    BadMagicError,
    ConfigError,
    DatasetFormatError,
    FmattackError,
    InvalidLabelError,
    NonFiniteGradientError,
    ShapeMismatchError,
    TapNotFoundError,
    TrailingDataError,
    TruncatedFileError,
    UnreachableNodeError,
    VersionMismatchError,
    WeightFormatError,
    WeightShapeError,
)
from .gradcam import bilinear_resize, gradcam_heatmap, write_pgm
from .models import (
    ARCH_IDS,
    DEFAULT_TAPS,
    ModelGraph,
    TrainConfig,
    build_model,
    load_weights,
    save_weights,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "METHODS",
    "TRANSFORMS",
    "AttackConfig",
    "AttackOutcome",
    "GuidanceState",
    "aggregate_feature_gradient",
    "derive_seed",
    "feature_objective",
    "run_attack",
    "update_feature_momentum",
    "GradRequest",
    "Tensor",
    "add",
    "backward",
    "conv2d",
    "dense",
    "flatten",
    "grad",
    "l1_normalize",
    "avgpool2d",
    "maxpool2d",
    "mul",
    "nearest_resize_pad",
    "relu",
    "scale",
    "softmax_cross_entropy",
    "tsum",
    "get_backend",
    "set_backend",
    "BenchCell",
    "BenchmarkReport",
    "SweepResult",
    "evaluate_transfer",
    "run_benchmark",
    "run_sweep",
    "select_eval_subset",
    "ExperimentConfig",
    "load_config",
    "Dataset",
    "load_dataset",
    "save_dataset",
    "synthesize",
    "BadMagicError",
    "ConfigError",
    "DatasetFormatError",
    "FmattackError",
    "InvalidLabelError",
    "NonFiniteGradientError",
    "ShapeMismatchError",
    "TapNotFoundError",
    "TrailingDataError",
    "TruncatedFileError",
    "UnreachableNodeError",
    "VersionMismatchError",
    "WeightFormatError",
    "WeightShapeError",
    "bilinear_resize",
    "gradcam_heatmap",
    "write_pgm",
    "ARCH_IDS",
    "DEFAULT_TAPS",
    "ModelGraph",
    "TrainConfig",
    "build_model",
    "load_weights",
    "save_weights",
    "train",
    "__version__",
]
