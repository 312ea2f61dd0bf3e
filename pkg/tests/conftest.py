import os

import numpy as np
import pytest

from fmattack.attack import derive_seed
from fmattack.data import save_dataset, synthesize
from fmattack.models import TrainConfig, build_model, save_weights, train

MINI_CONFIG = """\
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
methods = MIM, FIA, FMAA
sources = netA
targets = netB, netC
taps = netA:conv2
steps = 4
num_variants = 6

[bench]
eval_images = 8
sweep_images = 4
seed = 42
output_dir = {d}/out
"""


@pytest.fixture(scope="session")
def tiny_ds():
    return synthesize(600, seed=123)


@pytest.fixture(scope="session")
def tiny_test_ds():
    return synthesize(100, seed=124)


@pytest.fixture(scope="session")
def tiny_model(tiny_ds):
    model = build_model("netA", 10, (1, 16, 16), seed=derive_seed(7, "init", "netA"))
    return train(model, tiny_ds, TrainConfig(epochs=8, seed=derive_seed(7, "train", "netA")))


@pytest.fixture(scope="session")
def mini_env(tmp_path_factory, tiny_ds, tiny_test_ds, tiny_model):
    """A small but complete experiment directory: IDX data, trained weights
    for all three architectures, and a config file pointing at them."""
    d = str(tmp_path_factory.mktemp("mini_env"))
    save_dataset(tiny_ds, os.path.join(d, "train-images.idx"),
                 os.path.join(d, "train-labels.idx"))
    save_dataset(tiny_test_ds, os.path.join(d, "test-images.idx"),
                 os.path.join(d, "test-labels.idx"))
    save_weights(tiny_model, os.path.join(d, "netA.fstw"))
    for arch in ("netB", "netC"):
        model = build_model(arch, 10, (1, 16, 16), seed=derive_seed(7, "init", arch))
        model = train(model, tiny_ds, TrainConfig(epochs=6, seed=derive_seed(7, "train", arch)))
        save_weights(model, os.path.join(d, f"{arch}.fstw"))
    cfg_path = os.path.join(d, "exp.ini")
    with open(cfg_path, "w") as fh:
        fh.write(MINI_CONFIG.format(d=d))
    return cfg_path, d
