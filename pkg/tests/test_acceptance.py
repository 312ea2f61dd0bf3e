"""Acceptance suite: one test per release criterion, each printing an
explicit PASS/FAIL line with the measured numbers.

The expensive fixtures (dataset, trained model zoo) are cached under
.cache/acceptance inside the repository so reruns skip training; the
benchmark grids and sweeps are re-executed every run so the timing and
determinism checks stay honest.
"""

import csv
import os
import time

import numpy as np
import pytest

from fmattack import autodiff as ad
from fmattack.attack import (
    AttackConfig,
    aggregate_feature_gradient,
    derive_seed,
    run_attack,
    update_feature_momentum,
)
from fmattack.bench import craft_adversarial_set, run_benchmark, run_sweep
from fmattack.data import load_dataset, save_dataset, synthesize
from fmattack.models import TrainConfig, build_model, load_weights, save_weights, train

# ---------------------------------------------------------------------------
# The pinned evaluation environment. SEED is the documented benchmark seed;
# the training recipes below define the shipped model zoo (see README).

SEED = 42
EPSILON = 16.0 / 255.0
N_IMAGES = 200
TAP = "netA:conv1"

RECIPES = {
    "netA": ("netA", dict(epochs=4, weight_decay=0.02, noise_augment=0.08)),
    "netD": ("netA", dict(epochs=4, weight_decay=0.02, noise_augment=0.08)),
    "netB": ("netB", dict(epochs=10, noise_augment=0.19)),
    "netC": ("netC", dict(epochs=10, noise_augment=0.205)),
    "netB_adv": ("netB", dict(epochs=12, noise_augment=0.10, adversarial=True,
                              adv_epsilon=8.0 / 255.0, adv_steps=4)),
}

CACHE = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                     ".cache", "acceptance")

CONFIG_TEMPLATE = """\
[models]
netA = netA, {d}/netA.fstw
netD = netA, {d}/netD.fstw
netB = netB, {d}/netB.fstw
netC = netC, {d}/netC.fstw
netB_adv = netB, {d}/netB_adv.fstw

[dataset]
train_images = {d}/train-images.idx
train_labels = {d}/train-labels.idx
test_images = {d}/test-images.idx
test_labels = {d}/test-labels.idx
num_classes = 10

[attack]
methods = MIM, FIA, FMAA
sources = netA+netD
targets = netA, netD, netB, netC, netB_adv
taps = netA:conv1, netD:conv1

[bench]
eval_images = {n}
sweep_images = 60
seed = {seed}
output_dir = {d}/out
"""

# Sweeps use a single (non-ensemble) source, so criterion 7 gets its own
# config over the same dataset and weights.
SWEEP_CONFIG_TEMPLATE = """\
[models]
netA = netA, {d}/netA.fstw
netB = netB, {d}/netB.fstw
netC = netC, {d}/netC.fstw

[dataset]
train_images = {d}/train-images.idx
train_labels = {d}/train-labels.idx
test_images = {d}/test-images.idx
test_labels = {d}/test-labels.idx
num_classes = 10

[attack]
methods = FMAA
sources = netA
targets = netB, netC
taps = {tap}

[bench]
eval_images = {n}
sweep_images = 60
seed = {seed}
output_dir = {d}/out
"""


def _report(criterion, ok, detail):
    print(f"\n{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")
    assert ok, detail


@pytest.fixture(scope="session")
def env():
    """Dataset + trained zoo + config, cached on disk across runs."""
    os.makedirs(CACHE, exist_ok=True)
    data_paths = {f"{s}-{k}": os.path.join(CACHE, f"{s}-{k}.idx")
                  for s in ("train", "test") for k in ("images", "labels")}
    if not all(os.path.exists(p) for p in data_paths.values()):
        tr = synthesize(3000, seed=derive_seed(SEED, "train-data"), split="train")
        te = synthesize(1500, seed=derive_seed(SEED, "test-data"), split="test")
        save_dataset(tr, data_paths["train-images"], data_paths["train-labels"])
        save_dataset(te, data_paths["test-images"], data_paths["test-labels"])
    train_ds = load_dataset(data_paths["train-images"], data_paths["train-labels"], "train")
    models = {}
    for name, (arch, recipe) in RECIPES.items():
        wpath = os.path.join(CACHE, f"{name}.fstw")
        if not os.path.exists(wpath):
            model = build_model(arch, 10, (1, 16, 16),
                                seed=derive_seed(SEED, "init", name), name=name)
            model = train(model, train_ds,
                          TrainConfig(seed=derive_seed(SEED, "train", name), **recipe))
            save_weights(model, wpath)
        models[name] = load_weights(wpath, name=name)
    cfg_path = os.path.join(CACHE, "exp.ini")
    with open(cfg_path, "w") as fh:
        fh.write(CONFIG_TEMPLATE.format(d=CACHE, n=N_IMAGES, seed=SEED))
    sweep_cfg_path = os.path.join(CACHE, "sweep.ini")
    with open(sweep_cfg_path, "w") as fh:
        fh.write(SWEEP_CONFIG_TEMPLATE.format(d=CACHE, tap=TAP, n=N_IMAGES, seed=SEED))
    test_ds = load_dataset(data_paths["test-images"], data_paths["test-labels"], "test")
    return models, test_ds, cfg_path, sweep_cfg_path


@pytest.fixture(scope="session")
def grid(env):
    """One full benchmark run: (report, csv rows, wall-clock seconds)."""
    _, _, cfg_path, _ = env
    out = os.path.join(CACHE, "grid1")
    t0 = time.perf_counter()
    report = run_benchmark(cfg_path, output_dir=out)
    elapsed = time.perf_counter() - t0
    with open(os.path.join(out, "report.csv")) as fh:
        rows = list(csv.DictReader(fh))
    rates = {(r["method"], r["target"]): float(r["success_rate"]) for r in rows}
    return report, rates, elapsed


@pytest.fixture(scope="session")
def adv_sets(env):
    """Single-source (netA) adversarial sets over the grid's eval subset;
    these are the white-box attack runs for criteria 3 and 5."""
    models, test_ds, cfg_path, _ = env
    from fmattack.bench import select_eval_subset
    from fmattack.config import load_config
    cfg = load_config(cfg_path)
    grid_names = sorted({n for g in cfg.sources for n in g} | set(cfg.targets))
    images, labels = select_eval_subset([models[n] for n in grid_names],
                                        test_ds, cfg.eval_images)
    sets = {}
    for method in ("MIM", "FIA", "FMAA"):
        taps = () if method == "MIM" else (TAP,)
        acfg = AttackConfig(method=method, taps=taps,
                            seed=derive_seed(SEED, "whitebox", method))
        sets[method] = craft_adversarial_set([models["netA"]], images, labels, acfg)
    return images, labels, sets


# ---------------------------------------------------------------------------
# 1. gradient correctness


def _numgrad(fn, x, h=1e-3):
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def test_criterion_1_gradcheck():
    rng = np.random.default_rng(1001)
    t0 = time.perf_counter()
    failures = []
    cases = 0

    def check(name, build, x):
        nonlocal cases
        xt = ad.Tensor(x)
        out = build(xt)
        got = ad.backward(out, [xt])[xt].data.astype(np.float64)

        def value():
            return float(build(ad.Tensor(x)).item())

        want = _numgrad(value, x)
        mask = np.abs(got) > 1e-4
        if mask.any():
            rel = np.abs(got - want)[mask] / np.maximum(np.abs(want)[mask], 1e-12)
            if rel.max() >= 1e-3:
                failures.append((name, float(rel.max())))
        cases += 1

    ops = {
        "add": lambda x: ad.tsum(ad.add(x, ad.scale(x, 0.5))),
        "mul": lambda x: ad.tsum(ad.mul(x, x)),
        "scale": lambda x: ad.tsum(ad.scale(x, 1.7)),
        "relu": lambda x: ad.tsum(ad.relu(x)),
        "tsum": lambda x: ad.tsum(x),
        "flatten": lambda x: ad.tsum(ad.flatten(x)),
    }
    for name, build in ops.items():
        for _ in range(100):
            x = rng.normal(size=(2, 3, 4, 4)) * 2.0
            if name == "relu":  # keep away from the kink
                x = x + np.sign(x) * 0.05
            check(name, build, x)

    k = rng.normal(size=(3, 3, 3, 3)).astype(np.float32)
    b = rng.normal(size=3).astype(np.float32)
    for _ in range(100):
        x = rng.normal(size=(1, 3, 6, 6))
        check("conv2d", lambda x: ad.tsum(ad.conv2d(x, ad.Tensor(k), ad.Tensor(b))), x)
    w = rng.normal(size=(12, 4)).astype(np.float32)
    db = rng.normal(size=4).astype(np.float32)
    for _ in range(100):
        x = rng.normal(size=(2, 12))
        check("dense", lambda x: ad.tsum(ad.dense(x, ad.Tensor(w), ad.Tensor(db))), x)
    for _ in range(100):
        x = rng.normal(size=(1, 2, 4, 4)) * 3.0
        check("maxpool", lambda x: ad.tsum(ad.maxpool2d(x, 2, 2)), x)
        check("avgpool", lambda x: ad.tsum(ad.avgpool2d(x, 2)), x)
    labels = np.array([1], dtype=np.int64)
    for _ in range(100):
        x = rng.normal(size=(1, 5))
        check("softmax_ce",
              lambda x: ad.softmax_cross_entropy(x, labels, reduction="sum"), x)
    for _ in range(100):
        x = rng.normal(size=(1, 1, 6, 6))
        check("resize_pad",
              lambda x: ad.tsum(ad.nearest_resize_pad(x, 4, 4, 1, 1)), x)

    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 60.0
    _report(1, ok, f"{cases} finite-difference cases over 12 ops in {elapsed:.1f}s; "
            f"failures: {failures or 'none'}")


# ---------------------------------------------------------------------------
# 2. Eq. 2 unit suite


def test_criterion_2_feature_momentum_hand_values():
    beta = np.array([0.75, -0.25], dtype=np.float32)
    raw = np.array([0.5, -0.5], dtype=np.float32)
    got = update_feature_momentum(beta, raw, 1.1)
    want = np.array([1.1 * 0.75 + 0.5, 1.1 * -0.25 - 0.5], dtype=np.float32)
    err1 = float(np.abs(got - want).max())

    # lambda = 0 collapse: history dropped entirely
    got0 = update_feature_momentum(beta, raw, 0.0)
    err2 = float(np.abs(got0 - np.array([0.5, -0.5])).max())

    # zero accumulator: first step is exactly the normalized gradient
    gotz = update_feature_momentum(np.zeros(2, np.float32), raw, 1.1)
    err3 = float(np.abs(gotz - np.array([0.5, -0.5])).max())

    ok = max(err1, err2, err3) < 1e-6
    _report(2, ok, f"hand-value errors {err1:.2e}, lambda=0 {err2:.2e}, "
            f"zero-accumulator {err3:.2e} (tolerance 1e-6)")


# ---------------------------------------------------------------------------
# 3. budget invariant


def test_criterion_3_budget_invariant(adv_sets):
    images, _, sets = adv_sets
    violations = 0
    checked = 0
    for method, advs in sets.items():
        linf = np.abs(advs - images).reshape(len(advs), -1).max(axis=1)
        violations += int((linf > EPSILON + 1e-6).sum())
        violations += int((advs < 0.0).any(axis=(1, 2, 3)).sum())
        violations += int((advs > 1.0).any(axis=(1, 2, 3)).sum())
        checked += len(advs)
    ok = violations == 0 and checked >= 3 * N_IMAGES
    _report(3, ok, f"{checked} adversarial images across 3 methods, "
            f"{violations} budget/range violations")


# ---------------------------------------------------------------------------
# 4. FIA/FMAA same-seed equivalence at t = 0


def test_criterion_4_fia_fmaa_equivalence(env):
    models, test_ds, _, _ = env
    model = models["netA"]
    preds = model.predict(test_ds.images[:50])
    idx = int(np.flatnonzero(preds == test_ds.labels[:50])[0])
    img, label = test_ds.images[idx], int(test_ds.labels[idx])
    fia = run_attack(model, img, label,
                     AttackConfig(method="FIA", taps=("conv1",), seed=SEED),
                     record_guidance=True)
    fmaa = run_attack(model, img, label,
                      AttackConfig(method="FMAA", taps=("conv1",),
                                   feature_momentum=0.0, seed=SEED),
                      record_guidance=True)
    err = float(np.abs(fia.guidance_snapshots[0][(0, "conv1")]
                       - fmaa.guidance_snapshots[0][(0, "conv1")]).max())
    ok = err < 1e-6
    _report(4, ok, f"beta_1 at t=0, lambda=0 vs FIA frozen guidance: "
            f"max abs diff {err:.2e} (tolerance 1e-6)")


# ---------------------------------------------------------------------------
# 5-6. white-box potency and transfer ordering (the benchmark grid)


def test_criterion_5_white_box(env, adv_sets):
    models = env[0]
    images, labels, sets = adv_sets
    from fmattack.bench import evaluate_transfer
    mim = evaluate_transfer(sets["MIM"], labels, models["netA"])
    fmaa = evaluate_transfer(sets["FMAA"], labels, models["netA"])
    ok = mim >= 0.95 and fmaa >= 0.95
    _report(5, ok, f"single-source white-box success on netA over {len(images)} "
            f"images: MIM {mim:.3f}, FMAA {fmaa:.3f} (need >= 0.95 each)")


def test_criterion_6_transfer_ordering(grid):
    _, rates, elapsed = grid

    def avg(method):
        return (rates[(method, "netB")] + rates[(method, "netC")]) / 2.0

    mim, fia, fmaa = avg("MIM"), avg("FIA"), avg("FMAA")
    ok = (fmaa >= fia + 0.02 - 1e-9 and fia >= mim + 0.05 - 1e-9
          and elapsed < 1800.0)
    _report(6, ok, f"black-box avg over netB/netC ({N_IMAGES} images, seed {SEED}): "
            f"MIM {mim:.3f}, FIA {fia:.3f}, FMAA {fmaa:.3f} "
            f"(need FIA >= MIM+0.05, FMAA >= FIA+0.02); grid {elapsed:.0f}s < 1800s")


# ---------------------------------------------------------------------------
# 7. lambda ablation shape


def test_criterion_7_lambda_shape(env):
    _, _, _, sweep_cfg_path = env
    out = os.path.join(CACHE, "sweep")
    result = run_sweep("lambda", sweep_cfg_path, output_dir=out)
    by_lambda = {}
    for row in result.rows:
        if row["target"] in ("netB", "netC"):
            by_lambda.setdefault(float(row["lambda"]), []).append(row["success_rate"])
    mean = {lam: float(np.mean(v)) for lam, v in by_lambda.items()}
    best = max(mean[1.0], mean[1.5])
    ok = best > mean[0.0] and best > mean[4.0]
    _report(7, ok, "black-box success by lambda: "
            + ", ".join(f"{lam:.1f}: {mean[lam]:.3f}" for lam in sorted(mean))
            + f"; best of {{1.0, 1.5}} = {best:.3f} must strictly exceed "
            f"lambda=0 ({mean[0.0]:.3f}) and lambda=4 ({mean[4.0]:.3f})")


# ---------------------------------------------------------------------------
# 8. defense analogue


def test_criterion_8_defense_analogue(grid):
    _, rates, _ = grid
    fmaa_std = rates[("FMAA", "netB")]
    fmaa_adv = rates[("FMAA", "netB_adv")]
    mim_adv = rates[("MIM", "netB_adv")]
    ok = fmaa_adv < fmaa_std and fmaa_adv >= mim_adv + 0.05 - 1e-9
    _report(8, ok, f"FMAA vs adversarially trained netB_adv {fmaa_adv:.3f} must be "
            f"below standard twin {fmaa_std:.3f} and >= MIM on netB_adv "
            f"({mim_adv:.3f}) + 0.05")


# ---------------------------------------------------------------------------
# 9. determinism


def test_criterion_9_csv_determinism(env, grid):
    _, _, cfg_path, _ = env
    out2 = os.path.join(CACHE, "grid2")
    run_benchmark(cfg_path, output_dir=out2)
    b1 = open(os.path.join(CACHE, "grid1", "report.csv"), "rb").read()
    b2 = open(os.path.join(out2, "report.csv"), "rb").read()
    ok = b1 == b2
    _report(9, ok, f"two full benchmark runs, report.csv byte-identical: {b1 == b2} "
            f"({len(b1)} bytes)")


# ---------------------------------------------------------------------------
# 10. Grad-CAM oracle


def test_criterion_10_gradcam_oracle():
    from fmattack.gradcam import gradcam_heatmap
    from fmattack.models import ConvSpec, DenseSpec, FlattenSpec, ModelGraph, ReluSpec

    layers = [("conv1", ConvSpec(2, kernel=1)), ("relu1", ReluSpec()),
              ("flatten", FlattenSpec()), ("fc", DenseSpec(2))]
    w = np.zeros((2, 1, 1, 1), dtype=np.float32)
    w[0, 0, 0, 0] = 1.0
    w[1, 0, 0, 0] = -1.0
    fc_w = np.zeros((8, 2), dtype=np.float32)
    fc_w[:4, 0] = 1.0
    fc_w[4:, 0] = [0.5, 0.0, 0.0, -0.5]
    params = {"conv1.w": ad.Tensor(w),
              "conv1.b": ad.Tensor(np.array([0.0, 5.0], dtype=np.float32)),
              "fc.w": ad.Tensor(fc_w),
              "fc.b": ad.Tensor(np.zeros(2, dtype=np.float32))}
    model = ModelGraph("fixture", "netA", layers, params, 2, (1, 2, 2))
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]], dtype=np.float32)
    expect = np.array([[0.0, 1.0 / 3.0], [2.0 / 3.0, 1.0]], dtype=np.float32)
    err = float(np.abs(gradcam_heatmap(model, "conv1", x, 0) - expect).max())

    model.parameters["conv1.w"] = ad.Tensor(np.zeros((2, 1, 1, 1), np.float32))
    const_zero = bool((gradcam_heatmap(model, "conv1", x, 0) == 0.0).all())
    ok = err < 1e-6 and const_zero
    _report(10, ok, f"2x2 closed-form heatmap max error {err:.2e} (tolerance 1e-6); "
            f"constant features give all-zeros: {const_zero}")
