"""Command line interface.

Subcommands: train, attack, bench, sweep, viz, gen-data. Flags override
config keys; every subcommand takes --seed (default 42).
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import bench as bench_mod
from . import data as data_mod
from . import models as models_mod
from .attack import derive_seed
from .config import load_config
from .errors import FmattackError
from .gradcam import gradcam_heatmap, write_pgm


def _add_common(p):
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--seed", type=int, default=42, help="global RNG seed (default 42)")


def _build_parser():
    parser = argparse.ArgumentParser(prog="fmattack")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model from the config")
    _add_common(p)
    p.add_argument("--model", required=True, help="model name from [models]")
    p.add_argument("--adversarial", action="store_true",
                   help="train on a 50/50 clean/PGD mix")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--noise-augment", type=float,
                   help="sigma of fixed Gaussian noise applied to the training images")
    p.add_argument("--adv-epsilon", type=float)
    p.add_argument("--adv-steps", type=int)

    p = sub.add_parser("attack", help="craft adversarial images for one method/source")
    _add_common(p)
    p.add_argument("--method", required=True)
    p.add_argument("--source", required=True,
                   help="source model name, or a+b for an ensemble")
    p.add_argument("--count", type=int, default=20, help="number of images")
    p.add_argument("--out", default="adv.npy", help="output .npy for the adversarial batch")

    p = sub.add_parser("bench", help="run the full transfer benchmark grid")
    _add_common(p)
    p.add_argument("--output-dir")

    p = sub.add_parser("sweep", help="run an ablation sweep")
    _add_common(p)
    p.add_argument("--kind", required=True, choices=bench_mod.SWEEP_KINDS)
    p.add_argument("--output-dir")

    p = sub.add_parser("viz", help="write a Grad-CAM heatmap as PGM")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--tap", help="layer to visualise (defaults to the model's middle tap)")
    p.add_argument("--index", type=int, default=0, help="test image index")
    p.add_argument("--class-index", type=int,
                   help="class to explain (defaults to the true label)")
    p.add_argument("--out", help="output path (default heatmap_<model>_<index>.pgm)")

    p = sub.add_parser("gen-data", help="generate the synthetic IDX dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--train", type=int, default=3000)
    p.add_argument("--test", type=int, default=1500)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--seed", type=int, default=42)

    return parser


def _cmd_train(args):
    cfg = load_config(args.config)
    if args.model not in cfg.models:
        raise FmattackError(f"model {args.model!r} not declared in [models]")
    arch, wpath = cfg.models[args.model]
    train_ds = data_mod.load_dataset(cfg.dataset["train_images"],
                                     cfg.dataset["train_labels"], "train")
    num_classes = cfg.dataset.get("num_classes", 10)
    input_shape = train_ds.images.shape[1:]
    params = dict(cfg.train_params)
    for key in ("epochs", "batch_size", "learning_rate", "momentum",
                "weight_decay", "noise_augment", "adv_epsilon", "adv_steps"):
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            params[key] = val
    if args.adversarial:
        params.setdefault("adv_epsilon", 8.0 / 255.0)
        params.setdefault("adv_steps", 4)
    else:
        params.pop("adv_epsilon", None)
        params.pop("adv_steps", None)
    tcfg = models_mod.TrainConfig(adversarial=args.adversarial,
                                  seed=derive_seed(args.seed, "train", args.model),
                                  **params)
    model = models_mod.build_model(arch, num_classes, input_shape,
                                   seed=derive_seed(args.seed, "init", args.model),
                                   name=args.model)
    model = models_mod.train(model, train_ds, tcfg)
    os.makedirs(os.path.dirname(wpath) or ".", exist_ok=True)
    models_mod.save_weights(model, wpath)
    acc = model.accuracy(train_ds.images, train_ds.labels)
    print(f"trained {args.model} ({arch}) -> {wpath}; train accuracy {acc:.3f}")


def _cmd_attack(args):
    cfg = load_config(args.config)
    cfg.seed = args.seed
    models = bench_mod.load_models(cfg)
    source_group = args.source.split("+")
    for name in source_group:
        if name not in models:
            raise FmattackError(f"source model {name!r} not declared in [models]")
    test = data_mod.load_dataset(cfg.dataset["test_images"],
                                 cfg.dataset["test_labels"], "test")
    images, labels = bench_mod.select_eval_subset(
        [models[n] for n in source_group], test, args.count)
    acfg = bench_mod.cell_attack_config(
        cfg, args.method, source_group,
        derive_seed(args.seed, "cell", args.method, args.source, ""))
    advs = bench_mod.craft_adversarial_set([models[n] for n in source_group],
                                           images, labels, acfg)
    np.save(args.out, advs)
    rates = {n: bench_mod.evaluate_transfer(advs, labels, models[n])
             for n in source_group}
    print(f"wrote {len(advs)} adversarial images to {args.out}")
    for name, rate in rates.items():
        print(f"white-box success on {name}: {rate:.3f}")


def _cmd_bench(args):
    cfg_path = args.config
    report = bench_mod.run_benchmark(cfg_path, output_dir=args.output_dir, seed=args.seed)
    out_dir = args.output_dir or load_config(cfg_path).output_dir
    print(f"{len(report.cells)} cells over {report.subset_size} images "
          f"in {report.total_seconds:.1f}s -> {out_dir}/report.csv, {out_dir}/report.md")


def _cmd_sweep(args):
    result = bench_mod.run_sweep(args.kind, args.config, output_dir=args.output_dir, seed=args.seed)
    out_dir = args.output_dir or load_config(args.config).output_dir
    print(f"sweep {result.parameter}: {len(result.rows)} rows "
          f"-> {out_dir}/sweep_{args.kind}.csv")


def _cmd_viz(args):
    cfg = load_config(args.config)
    models = bench_mod.load_models(cfg)
    if args.model not in models:
        raise FmattackError(f"model {args.model!r} not declared in [models]")
    model = models[args.model]
    tap = args.tap or models_mod.DEFAULT_TAPS[model.arch_id]
    test = data_mod.load_dataset(cfg.dataset["test_images"],
                                 cfg.dataset["test_labels"], "test")
    image = test.images[args.index]
    cls = args.class_index if args.class_index is not None else int(test.labels[args.index])
    heatmap = gradcam_heatmap(model, tap, image, cls)
    out = args.out or f"heatmap_{args.model}_{args.index}.pgm"
    write_pgm(out, heatmap)
    print(f"wrote {out} (tap {tap}, class {cls})")


def _cmd_gen_data(args):
    os.makedirs(args.out_dir, exist_ok=True)
    train = data_mod.synthesize(args.train, size=args.size,
                                seed=derive_seed(args.seed, "train-data"), split="train")
    test = data_mod.synthesize(args.test, size=args.size,
                               seed=derive_seed(args.seed, "test-data"), split="test")
    paths = {}
    for split, ds in (("train", train), ("test", test)):
        ip = os.path.join(args.out_dir, f"{split}-images.idx")
        lp = os.path.join(args.out_dir, f"{split}-labels.idx")
        data_mod.save_dataset(ds, ip, lp)
        paths[split] = (ip, lp)
    print(f"wrote {args.train} train / {args.test} test images under {args.out_dir}")


def main(argv=None):
    args = _build_parser().parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "attack": _cmd_attack,
        "bench": _cmd_bench,
        "sweep": _cmd_sweep,
        "viz": _cmd_viz,
        "gen-data": _cmd_gen_data,
    }
    try:
        handlers[args.command](args)
    except FmattackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
