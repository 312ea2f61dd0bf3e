"""Benchmark harness, sweeps, Grad-CAM, and the command line interface."""

import csv
import os

import numpy as np
import pytest

from fmattack import autodiff as ad
from fmattack.bench import (
    evaluate_transfer,
    run_benchmark,
    run_sweep,
    select_eval_subset,
)
from fmattack.cli import main
from fmattack.data import load_dataset
from fmattack.errors import ConfigError, FmattackError
from fmattack.gradcam import bilinear_resize, gradcam_heatmap, write_pgm
from fmattack.models import (
    ConvSpec,
    DenseSpec,
    FlattenSpec,
    ModelGraph,
    ReluSpec,
    load_weights,
)


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# harness pieces


def test_evaluate_transfer(tiny_model, tiny_test_ds):
    rate = evaluate_transfer(tiny_test_ds.images, tiny_test_ds.labels, tiny_model)
    assert 0.0 <= rate <= 1.0
    # flipping every label makes every prediction (mis)count invert
    wrong = (tiny_test_ds.labels + 1) % 10
    flipped = evaluate_transfer(tiny_test_ds.images, wrong, tiny_model)
    assert rate + flipped != pytest.approx(0.0)


def test_select_eval_subset(tiny_model, tiny_test_ds):
    images, labels = select_eval_subset([tiny_model], tiny_test_ds, 10)
    assert len(images) <= 10
    assert (tiny_model.predict(images) == labels).all()


def test_benchmark_end_to_end(mini_env):
    cfg_path, d = mini_env
    report = run_benchmark(cfg_path)
    # 3 methods x 1 source x 2 targets
    assert len(report.cells) == 6
    assert report.subset_size == 8
    for cell in report.cells:
        assert 0.0 <= cell.success_rate <= 1.0
        assert cell.mean_linf <= 16.0 / 255.0 + 1e-6
        assert cell.n_images == 8
    csv_path = os.path.join(d, "out", "report.csv")
    md_path = os.path.join(d, "out", "report.md")
    rows = _read_csv(csv_path)
    assert len(rows) == 6
    assert {r["method"] for r in rows} == {"MIM", "FIA", "FMAA"}
    assert os.path.exists(md_path)


def test_benchmark_csv_byte_identical(mini_env, tmp_path):
    cfg_path, _ = mini_env
    d1, d2 = str(tmp_path / "r1"), str(tmp_path / "r2")
    run_benchmark(cfg_path, output_dir=d1, seed=7)
    run_benchmark(cfg_path, output_dir=d2, seed=7)
    b1 = open(os.path.join(d1, "report.csv"), "rb").read()
    b2 = open(os.path.join(d2, "report.csv"), "rb").read()
    assert b1 == b2


def test_benchmark_seed_changes_results(mini_env, tmp_path):
    cfg_path, _ = mini_env
    d1, d2 = str(tmp_path / "s1"), str(tmp_path / "s2")
    run_benchmark(cfg_path, output_dir=d1, seed=7)
    run_benchmark(cfg_path, output_dir=d2, seed=8)
    b1 = open(os.path.join(d1, "report.csv"), "rb").read()
    b2 = open(os.path.join(d2, "report.csv"), "rb").read()
    assert b1 != b2


def test_benchmark_missing_weights(mini_env, tmp_path):
    cfg_path, d = mini_env
    text = open(cfg_path).read().replace(
        os.path.join(d, "netB.fstw"), str(tmp_path / "missing.fstw"))
    bad = tmp_path / "exp.ini"
    bad.write_text(text)
    with pytest.raises(FmattackError, match="missing"):
        run_benchmark(str(bad), output_dir=str(tmp_path / "o"))


def test_sweep_lambda(mini_env, tmp_path):
    cfg_path, _ = mini_env
    out = str(tmp_path / "sw")
    result = run_sweep("lambda", cfg_path, output_dir=out)
    rows = _read_csv(os.path.join(out, "sweep_lambda.csv"))
    lambdas = sorted({float(r["lambda"]) for r in rows})
    assert lambdas == [x * 0.5 for x in range(9)]
    assert len(rows) == 9 * 2  # two targets
    assert result.parameter == "lambda"


def test_sweep_layer(mini_env, tmp_path):
    cfg_path, _ = mini_env
    out = str(tmp_path / "sl")
    run_sweep("layer", cfg_path, output_dir=out)
    rows = _read_csv(os.path.join(out, "sweep_layer.csv"))
    taps = {r["taps"] for r in rows}
    # all four single conv taps of netA plus the documented combos
    assert {"conv1", "conv2", "conv3", "conv4"} <= taps
    assert any("+" in t for t in taps)


def test_sweep_drop_prob(mini_env, tmp_path):
    cfg_path, _ = mini_env
    out = str(tmp_path / "sd")
    run_sweep("drop_prob", cfg_path, output_dir=out)
    rows = _read_csv(os.path.join(out, "sweep_drop_prob.csv"))
    assert len(rows) == 25 * 2
    assert {r["p1"] for r in rows} == {"0.1", "0.2", "0.3", "0.4", "0.5"}


def test_sweep_unknown_kind(mini_env):
    cfg_path, _ = mini_env
    with pytest.raises(ConfigError, match="unknown sweep kind"):
        run_sweep("epsilon", cfg_path)


# ---------------------------------------------------------------------------
# Grad-CAM


def _gradcam_fixture_model():
    """1x2x2 input, 1x1 conv to two channels, dense head; every quantity
    of the Grad-CAM computation is hand-checkable."""
    layers = [("conv1", ConvSpec(2, kernel=1)), ("relu1", ReluSpec()),
              ("flatten", FlattenSpec()), ("fc", DenseSpec(2))]
    w = np.zeros((2, 1, 1, 1), dtype=np.float32)
    w[0, 0, 0, 0] = 1.0
    w[1, 0, 0, 0] = -1.0
    fc_w = np.zeros((8, 2), dtype=np.float32)
    fc_w[:4, 0] = 1.0                      # class 0 reads channel 0 evenly
    fc_w[4:, 0] = [0.5, 0.0, 0.0, -0.5]    # channel 1 weights cancel spatially
    params = {
        "conv1.w": ad.Tensor(w),
        "conv1.b": ad.Tensor(np.array([0.0, 5.0], dtype=np.float32)),
        "fc.w": ad.Tensor(fc_w),
        "fc.b": ad.Tensor(np.zeros(2, dtype=np.float32)),
    }
    return ModelGraph("fixture", "netA", layers, params, 2, (1, 2, 2))


def test_gradcam_2x2_oracle():
    model = _gradcam_fixture_model()
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]], dtype=np.float32)
    # channel weights: alpha_0 = mean(ones) = 1, alpha_1 = mean([.5,0,0,-.5]) = 0
    # cam = relu(1 * F0) = [[1,2],[3,4]]; min-max normalized over [1, 4]
    expect = np.array([[0.0, 1.0 / 3.0], [2.0 / 3.0, 1.0]], dtype=np.float32)
    heat = gradcam_heatmap(model, "conv1", x, 0)
    assert heat.shape == (2, 2)
    assert np.abs(heat - expect).max() < 1e-6


def test_gradcam_constant_features_all_zero():
    model = _gradcam_fixture_model()
    # zero conv weights -> features are the constant biases -> zero heatmap
    model.parameters["conv1.w"] = ad.Tensor(np.zeros((2, 1, 1, 1), np.float32))
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]], dtype=np.float32)
    heat = gradcam_heatmap(model, "conv1", x, 0)
    assert np.array_equal(heat, np.zeros((2, 2), np.float32))


def test_gradcam_on_real_model(tiny_model, tiny_test_ds):
    heat = gradcam_heatmap(tiny_model, "conv3", tiny_test_ds.images[0],
                           int(tiny_test_ds.labels[0]))
    assert heat.shape == (16, 16)
    assert heat.min() >= 0.0 and heat.max() <= 1.0


def test_bilinear_resize_values():
    arr = np.array([[0.0, 1.0], [2.0, 3.0]])
    out = bilinear_resize(arr, 3, 3)
    expect = np.array([[0.0, 0.5, 1.0], [1.0, 1.5, 2.0], [2.0, 2.5, 3.0]])
    assert np.abs(out - expect).max() < 1e-12
    same = bilinear_resize(arr, 2, 2)
    assert np.array_equal(same, arr)


def test_write_pgm(tmp_path):
    heat = np.array([[0.0, 0.5], [1.0, 0.25]])
    path = str(tmp_path / "h.pgm")
    write_pgm(path, heat)
    raw = open(path, "rb").read()
    assert raw.startswith(b"P5\n2 2\n255\n")
    assert raw[-4:] == bytes([0, 128, 255, 64])


# ---------------------------------------------------------------------------
# CLI


def test_cli_gen_data(tmp_path):
    out = str(tmp_path / "data")
    rc = main(["gen-data", "--out-dir", out, "--train", "20", "--test", "10"])
    assert rc == 0
    ds = load_dataset(os.path.join(out, "train-images.idx"),
                      os.path.join(out, "train-labels.idx"))
    assert len(ds) == 20


def test_cli_train_and_attack(tmp_path):
    d = str(tmp_path)
    main(["gen-data", "--out-dir", d, "--train", "60", "--test", "30"])
    cfg = tmp_path / "exp.ini"
    cfg.write_text(f"""\
[models]
netA = netA, {d}/netA.fstw
[dataset]
train_images = {d}/train-images.idx
train_labels = {d}/train-labels.idx
test_images = {d}/test-images.idx
test_labels = {d}/test-labels.idx
[attack]
methods = FMAA
sources = netA
targets = netA
taps = netA:conv2
steps = 3
num_variants = 4
""")
    rc = main(["train", "--config", str(cfg), "--model", "netA", "--epochs", "2"])
    assert rc == 0
    model = load_weights(os.path.join(d, "netA.fstw"))
    assert model.arch_id == "netA"
    out_npy = os.path.join(d, "adv.npy")
    rc = main(["attack", "--config", str(cfg), "--method", "FMAA",
               "--source", "netA", "--count", "3", "--out", out_npy])
    assert rc == 0
    advs = np.load(out_npy)
    assert advs.ndim == 4 and len(advs) <= 3


def test_cli_bench_and_viz(mini_env, tmp_path):
    cfg_path, d = mini_env
    out = str(tmp_path / "cli_out")
    rc = main(["bench", "--config", cfg_path, "--output-dir", out])
    assert rc == 0
    assert os.path.exists(os.path.join(out, "report.csv"))
    pgm = str(tmp_path / "cam.pgm")
    rc = main(["viz", "--config", cfg_path, "--model", "netA",
               "--index", "1", "--out", pgm])
    assert rc == 0
    assert open(pgm, "rb").read().startswith(b"P5\n16 16\n255\n")


def test_cli_error_exit_code(tmp_path):
    cfg = tmp_path / "exp.ini"
    cfg.write_text("[models]\nnetA = netA\n")
    rc = main(["bench", "--config", str(cfg)])
    assert rc == 1
