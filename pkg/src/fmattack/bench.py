"""Benchmark orchestration: transfer grids, ablation sweeps, reports.

A benchmark run crafts one adversarial set per (method, source) over an
evaluation subset of test images that every configured model classifies
correctly, then scores each target model on it. Results go to report.csv
(machine readable, byte-reproducible under a fixed seed) and report.md
(human readable, includes per-cell wall-clock).
"""

import csv
import io
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from .attack import AttackConfig, derive_seed, run_attack
from .config import load_config
from .data import load_dataset
from .errors import ConfigError, FmattackError
from .models import DEFAULT_TAPS, TAP_COMBOS, load_weights

LAMBDA_GRID = [x * 0.5 for x in range(9)]          # 0.0 .. 4.0
DROP_GRID = [x * 0.1 for x in range(1, 6)]          # 0.1 .. 0.5
SWEEP_KINDS = ("lambda", "layer", "drop_prob")


@dataclass
class BenchCell:
    method: str
    transforms: str
    source: str
    target: str
    n_images: int
    success_rate: float
    mean_linf: float
    seconds: float


@dataclass
class BenchmarkReport:
    cells: list
    config_snapshot: dict
    subset_size: int
    total_seconds: float


@dataclass
class SweepResult:
    parameter: str
    values: list
    rows: list  # dicts with value field(s), target, n_images, success_rate


def evaluate_transfer(adv_images, labels, target_model):
    """Fraction of images the target model misclassifies."""
    preds = target_model.predict(np.asarray(adv_images, dtype=np.float32))
    return float((preds != np.asarray(labels)).mean())


def select_eval_subset(models, dataset, count):
    """First `count` test images correctly classified by every model."""
    images = np.asarray(dataset.images, dtype=np.float32)
    labels = np.asarray(dataset.labels)
    keep = np.ones(len(labels), dtype=bool)
    for model in models:
        keep &= model.predict(images) == labels
    idx = np.flatnonzero(keep)[:count]
    return images[idx], labels[idx]


def load_models(cfg):
    models = {}
    for name, (arch, path) in cfg.models.items():
        if not os.path.exists(path):
            raise FmattackError(
                f"weight file {path!r} for model {name!r} is missing; run the train command")
        models[name] = load_weights(path, name=name)
    return models


def cell_attack_config(cfg, method, source_names, seed, **overrides):
    taps = tuple(t for t in cfg.taps if t.split(":", 1)[0] in source_names)
    params = dict(cfg.attack_params)
    params.update(overrides)
    return AttackConfig(method=method, taps=taps, transforms=tuple(cfg.transforms),
                        seed=seed, **params)


def craft_adversarial_set(models, images, labels, acfg):
    """Run the configured attack over a batch of images; per-image RNG
    streams are keyed by (cfg.seed, image index)."""
    advs = np.empty_like(images)
    for i, (img, lab) in enumerate(zip(images, labels)):
        per_image = replace(acfg, seed=derive_seed(acfg.seed, "image", i))
        advs[i] = run_attack(models, img, int(lab), per_image).adv_image
    return advs


def run_benchmark(config_path, output_dir=None, seed=None):
    """Execute the full (method, source, target) grid and emit reports."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg.seed = seed
    out_dir = output_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    models = load_models(cfg)
    test = load_dataset(cfg.dataset["test_images"], cfg.dataset["test_labels"], "test")
    grid_model_names = sorted({n for g in cfg.sources for n in g} | set(cfg.targets))
    images, labels = select_eval_subset(
        [models[n] for n in grid_model_names], test, cfg.eval_images)
    if len(images) == 0:
        raise FmattackError("no test images are correctly classified by every model")

    cells = []
    t_start = time.perf_counter()
    for method in cfg.methods:
        for source_group in cfg.sources:
            source_name = "+".join(source_group)
            cell_seed = derive_seed(cfg.seed, "cell", method, source_name,
                                    ",".join(cfg.transforms))
            acfg = cell_attack_config(cfg, method, source_group, cell_seed)
            t0 = time.perf_counter()
            advs = craft_adversarial_set([models[n] for n in source_group],
                                         images, labels, acfg)
            craft_seconds = time.perf_counter() - t0
            mean_linf = float(np.abs(advs - images).reshape(len(advs), -1)
                              .max(axis=1).mean())
            for target in cfg.targets:
                t1 = time.perf_counter()
                rate = evaluate_transfer(advs, labels, models[target])
                cells.append(BenchCell(
                    method=method,
                    transforms="+".join(cfg.transforms),
                    source=source_name,
                    target=target,
                    n_images=len(images),
                    success_rate=rate,
                    mean_linf=mean_linf,
                    seconds=craft_seconds / len(cfg.targets) + time.perf_counter() - t1,
                ))
    total = time.perf_counter() - t_start

    snapshot = {
        "seed": cfg.seed, "eval_images": cfg.eval_images,
        "methods": ",".join(cfg.methods), "transforms": ",".join(cfg.transforms),
        "sources": ";".join("+".join(g) for g in cfg.sources),
        "targets": ",".join(cfg.targets), "taps": ",".join(cfg.taps),
        **{k: v for k, v in sorted(cfg.attack_params.items())},
    }
    report = BenchmarkReport(cells=cells, config_snapshot=snapshot,
                             subset_size=len(images), total_seconds=total)
    write_report_csv(report, os.path.join(out_dir, "report.csv"))
    write_report_md(report, os.path.join(out_dir, "report.md"))
    return report


def write_report_csv(report, path):
    """Deterministic CSV (timing lives in report.md, not here, so reruns
    with one seed are byte-identical)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "transforms", "source", "target", "n_images",
                     "success_rate", "mean_linf"])
    for c in report.cells:
        writer.writerow([c.method, c.transforms, c.source, c.target, c.n_images,
                         f"{c.success_rate:.4f}", f"{c.mean_linf:.6f}"])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def write_report_md(report, path):
    targets = []
    for c in report.cells:
        if c.target not in targets:
            targets.append(c.target)
    rows = {}
    for c in report.cells:
        key = (c.method, c.transforms, c.source)
        rows.setdefault(key, {})[c.target] = c
    lines = ["# Transfer benchmark", "",
             f"Evaluation subset: {report.subset_size} images; "
             f"total wall-clock {report.total_seconds:.1f}s.", "",
             "| method | transforms | source | " + " | ".join(targets)
             + " | seconds |",
             "|" + "---|" * (len(targets) + 4)]
    for (method, transforms, source), by_target in rows.items():
        vals = [f"{by_target[t].success_rate * 100:.1f}" if t in by_target else "-"
                for t in targets]
        secs = sum(c.seconds for c in by_target.values())
        lines.append(f"| {method} | {transforms or '-'} | {source} | "
                     + " | ".join(vals) + f" | {secs:.1f} |")
    lines += ["", "## Config", ""]
    lines += [f"- {k}: {v}" for k, v in report.config_snapshot.items()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# ablation sweeps


def _sweep_setup(cfg):
    models = load_models(cfg)
    test = load_dataset(cfg.dataset["test_images"], cfg.dataset["test_labels"], "test")
    grid_model_names = sorted({n for g in cfg.sources for n in g} | set(cfg.targets))
    images, labels = select_eval_subset(
        [models[n] for n in grid_model_names], test, cfg.sweep_images)
    source_group = cfg.sources[0]
    if len(source_group) != 1:
        raise ConfigError("sweeps use a single (non-ensemble) source model")
    source = source_group[0]
    targets = [t for t in cfg.targets if t != source]
    return models, images, labels, source, targets


def run_sweep(kind, config_path, output_dir=None, seed=None):
    """Ablation sweeps: feature-momentum weight grid, tap layer grid, or
    drop-probability grid. Emits sweep_<kind>.csv."""
    if kind not in SWEEP_KINDS:
        raise ConfigError(f"unknown sweep kind {kind!r}; expected one of {SWEEP_KINDS}")
    cfg = load_config(config_path)
    if seed is not None:
        cfg.seed = seed
    out_dir = output_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    models, images, labels, source, targets = _sweep_setup(cfg)
    src_model = models[source]
    rows = []

    def craft(**overrides):
        seed = derive_seed(cfg.seed, "sweep", kind,
                           *[f"{k}={v}" for k, v in sorted(overrides.items())])
        acfg = cell_attack_config(cfg, "FMAA", [source], seed)
        acfg = replace(acfg, **overrides)
        return craft_adversarial_set(src_model, images, labels, acfg)

    if kind == "lambda":
        values = LAMBDA_GRID
        for lam in values:
            advs = craft(feature_momentum=lam)
            for target in targets:
                rows.append({"lambda": f"{lam:.1f}", "target": target,
                             "n_images": len(images),
                             "success_rate": evaluate_transfer(advs, labels, models[target])})
        header = ["lambda", "target", "n_images", "success_rate"]
    elif kind == "layer":
        single = [(t,) for t in src_model.tap_names]
        values = single + TAP_COMBOS[src_model.arch_id]
        for combo in values:
            advs = craft(taps=tuple(f"{source}:{layer}" for layer in combo))
            for target in targets:
                rows.append({"taps": "+".join(combo), "target": target,
                             "n_images": len(images),
                             "success_rate": evaluate_transfer(advs, labels, models[target])})
        header = ["taps", "target", "n_images", "success_rate"]
    else:
        values = [(p1, p2) for p1 in DROP_GRID for p2 in DROP_GRID]
        for p1, p2 in values:
            advs = craft(drop_first=round(p1, 1), drop_rest=round(p2, 1))
            for target in targets:
                rows.append({"p1": f"{p1:.1f}", "p2": f"{p2:.1f}", "target": target,
                             "n_images": len(images),
                             "success_rate": evaluate_transfer(advs, labels, models[target])})
        header = ["p1", "p2", "target", "n_images", "success_rate"]

    path = os.path.join(out_dir, f"sweep_{kind}.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[h] if h != "success_rate" else f"{row[h]:.4f}"
                             for h in header])
    return SweepResult(parameter=kind, values=list(values), rows=rows)
