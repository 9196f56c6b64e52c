from __future__ import annotations

import numpy as np
import pytest

from anosups import synth
from anosups.reconstructor import TrainConfig, train


def small_config(**kw) -> synth.SuiteConfig:
    base = dict(n_images=6, height=64, width=64, channels=3, patch_size=16, texture="blotch",
                size_min=4, size_max=24, seed=3)
    base.update(kw)
    return synth.SuiteConfig(**base)


@pytest.fixture(scope="session")
def small_suite_config():
    return small_config()


@pytest.fixture(scope="session")
def small_train_images(small_suite_config):
    return synth.normal_images(small_suite_config, 12, "train")


@pytest.fixture(scope="session")
def pca_model(small_train_images):
    return train(TrainConfig(rank=4), "pca", small_train_images)


@pytest.fixture(scope="session")
def tiny_attention_model(small_train_images):
    cfg = TrainConfig(epochs=3, dim=16, heads=2, blocks=1, batch_size=4, seed=1)
    return train(cfg, "attention", small_train_images)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One line per acceptance criterion, filled in by test_acceptance.py.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
