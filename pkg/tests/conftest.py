import os
from pathlib import Path

import numpy as np
import pytest
import torch

from embsurg import config, experiments, nets
from embsurg.synthdata import DatasetSpec, generate_dataset

CACHE_DIR = Path(os.environ.get("EMBSURG_FIXTURE_CACHE", Path(__file__).resolve().parent.parent / ".fixture_cache"))

TINY_OVERRIDES = {
    "gan_train.iterations": 40,
    "gan_train.snapshot_interval": 20,
    "classifier_train.epochs": 1,
    "gan_data.samples_per_class": 16,
    "classifier_data.samples_per_class": 16,
    "target_data.samples_per_class": 16,
    "target_data.num_classes": 3,
    "reference_data.samples_per_class": 8,
    "optimization.steps": 6,
    "optimization.trials": 2,
    "metrics.n_images": 32,
    "metrics.n_pairs": 16,
    "metrics.is_splits": 2,
    "metrics.mix_each": 16,
    "experiments.low_diversity_classes": [0, 1],
    "experiments.repurpose_classes": [0],
    "experiments.repurpose_top_k": 2,
}


def tiny_config(**extra):
    return config.load_config(overrides={**TINY_OVERRIDES, **extra})


@pytest.fixture(scope="session")
def tiny_fixture(tmp_path_factory):
    """Barely trained artifacts; exercises plumbing, not quality."""
    return experiments.build_fixture(tiny_config(), tmp_path_factory.mktemp("tiny-cache"))


@pytest.fixture(scope="session")
def reference_fixture():
    """The default-config fixture used by the acceptance suite (cached on disk)."""
    cfg = config.from_dict({})
    return experiments.build_fixture(cfg, CACHE_DIR)


@pytest.fixture
def small_generator():
    cfg = nets.GeneratorConfig(num_classes=4, latent_dim=8, embed_dim=6, image_size=16, hidden=32, base_channels=16)
    return nets.new_generator(cfg, seed=3)


@pytest.fixture
def small_classifier():
    cfg = nets.ClassifierConfig(num_classes=4, image_size=16, widths=(8, 8, 8), penultimate=8)
    return nets.new_classifier(cfg, seed=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def shapes_a():
    return generate_dataset(DatasetSpec(samples_per_class=20, seed=11))


def uniform_classifier(num_classes=10, image_size=32, channels=3):
    """Classifier whose final layer is zeroed, so every output row is uniform."""
    p = nets.new_classifier(nets.ClassifierConfig(num_classes=num_classes, image_size=image_size, channels=channels))
    with torch.no_grad():
        for prm in p.net.head.parameters():
            prm.zero_()
    return p


# criterion number -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
