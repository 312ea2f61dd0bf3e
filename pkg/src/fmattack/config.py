"""Experiment config files (INI-style key-value sections).

Sections and keys are validated strictly: anything unknown is an error.

    [models]            ; one entry per model: name = arch, weights-path
    netA = netA, weights/netA.fstw

    [dataset]
    train_images = data/train-images.idx
    train_labels = data/train-labels.idx
    test_images  = data/test-images.idx
    test_labels  = data/test-labels.idx
    num_classes  = 10          ; optional

    [attack]
    methods    = MIM, FIA, FMAA
    transforms =               ; optional, e.g. DIM, TIM, PIM
    sources    = netA          ; "a+b" declares an ensemble source
    targets    = netA, netB, netC
    taps       = netA:conv3, netB:conv4
    epsilon / steps / step_size / feature_momentum / grad_momentum /
    num_variants / drop_first / drop_rest     ; optional hyperparameters

    [bench]
    eval_images = 200
    sweep_images = 60
    seed = 42
    output_dir = out

    [train]                    ; optional, used by the train subcommand
    epochs / batch_size / learning_rate / momentum / weight_decay /
    noise_augment / adv_epsilon / adv_steps
"""

import configparser
from dataclasses import dataclass, field

from .errors import ConfigError
from .models import ARCH_IDS

_ATTACK_FLOAT_KEYS = ("epsilon", "step_size", "feature_momentum", "grad_momentum",
                      "drop_first", "drop_rest")
_ATTACK_INT_KEYS = ("steps", "num_variants")
_ATTACK_LIST_KEYS = ("methods", "transforms", "sources", "targets", "taps")

_SCHEMA = {
    "models": None,  # free-form names
    "dataset": {"train_images", "train_labels", "test_images", "test_labels",
                "num_classes"},
    "attack": set(_ATTACK_FLOAT_KEYS) | set(_ATTACK_INT_KEYS) | set(_ATTACK_LIST_KEYS),
    "bench": {"eval_images", "sweep_images", "seed", "output_dir"},
    "train": {"epochs", "batch_size", "learning_rate", "momentum",
              "weight_decay", "noise_augment", "adv_epsilon", "adv_steps"},
}


@dataclass
class ExperimentConfig:
    models: dict            # name -> (arch_id, weights_path)
    dataset: dict           # path keys, num_classes
    methods: list
    transforms: list
    sources: list           # each entry a list of model names (len > 1 = ensemble)
    targets: list
    taps: list
    attack_params: dict     # kwargs for AttackConfig
    eval_images: int = 200
    sweep_images: int = 60
    seed: int = 42
    output_dir: str = "out"
    train_params: dict = field(default_factory=dict)


def _split_list(value):
    return [v.strip() for v in value.split(",") if v.strip()]


def load_config(path):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep model names case-sensitive
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file {path!r} not found")
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        allowed = _SCHEMA[section]
        if allowed is not None:
            unknown = set(parser[section]) - allowed
            if unknown:
                raise ConfigError(
                    f"unknown key(s) {sorted(unknown)} in section [{section}]")
    for required in ("models", "dataset", "attack"):
        if required not in parser:
            raise ConfigError(f"missing required config section [{required}]")

    models = {}
    for name, value in parser["models"].items():
        parts = _split_list(value)
        if len(parts) != 2:
            raise ConfigError(f"model {name!r} must be declared as 'arch, weights-path'")
        arch, wpath = parts
        if arch not in ARCH_IDS:
            raise ConfigError(f"model {name!r} has unknown arch {arch!r}")
        models[name] = (arch, wpath)

    dataset = dict(parser["dataset"])
    if "num_classes" in dataset:
        dataset["num_classes"] = int(dataset["num_classes"])

    atk = parser["attack"]
    methods = _split_list(atk.get("methods", ""))
    if not methods:
        raise ConfigError("attack.methods must list at least one method")
    transforms = _split_list(atk.get("transforms", ""))
    sources = [_split_list(s.replace("+", ",")) for s in _split_list(atk.get("sources", ""))]
    targets = _split_list(atk.get("targets", ""))
    taps = _split_list(atk.get("taps", ""))
    if not sources or not targets:
        raise ConfigError("attack.sources and attack.targets are required")
    for group in sources:
        for name in group:
            if name not in models:
                raise ConfigError(f"source model {name!r} is not declared in [models]")
    for name in targets:
        if name not in models:
            raise ConfigError(f"target model {name!r} is not declared in [models]")
    for tap in taps:
        if ":" not in tap:
            raise ConfigError(f"tap {tap!r} must be qualified as model:layer")
        if tap.split(":", 1)[0] not in models:
            raise ConfigError(f"tap {tap!r} names an undeclared model")

    attack_params = {}
    for key in _ATTACK_FLOAT_KEYS:
        if key in atk:
            attack_params[key] = float(atk[key])
    for key in _ATTACK_INT_KEYS:
        if key in atk:
            attack_params[key] = int(atk[key])

    kwargs = {}
    if "bench" in parser:
        b = parser["bench"]
        if "eval_images" in b:
            kwargs["eval_images"] = int(b["eval_images"])
        if "sweep_images" in b:
            kwargs["sweep_images"] = int(b["sweep_images"])
        if "seed" in b:
            kwargs["seed"] = int(b["seed"])
        if "output_dir" in b:
            kwargs["output_dir"] = b["output_dir"]

    train_params = {}
    if "train" in parser:
        t = parser["train"]
        for key in ("epochs", "batch_size", "adv_steps"):
            if key in t:
                train_params[key] = int(t[key])
        for key in ("learning_rate", "momentum", "weight_decay", "noise_augment",
                    "adv_epsilon"):
            if key in t:
                train_params[key] = float(t[key])

    return ExperimentConfig(
        models=models, dataset=dataset, methods=methods, transforms=transforms,
        sources=sources, targets=targets, taps=taps, attack_params=attack_params,
        train_params=train_params, **kwargs)
