"""Shared fixtures for the ffdi test suite."""

import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from ffdi.modules.config import FfdiConfig, NoiseConfig, TrainConfig  # noqa: E402
from ffdi.modules.data import build_dataset  # noqa: E402

TINY_DOMAINS = ("flat", "gradient", "sketch")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("FFDI_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow experiment; set FFDI_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def numeric_grad(f, array, eps=1e-6):
    """Central differences of scalar f() with respect to every element of array (modified in place)."""
    grad = np.zeros_like(array, dtype=np.float64)
    flat, out = array.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = f()
        flat[i] = original - eps
        minus = f()
        flat[i] = original
        out[i] = (plus - minus) / (2 * eps)
    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_cfg():
    """16 x 16 inputs, 4 x 4 features, two-stage decoder; float64 for gradient checks."""
    return FfdiConfig(
        num_classes=3,
        image_size=16,
        encoder_widths=(4, 6, 8),
        encoder_strides=(1, 2, 2),
        decoder_widths=(6,),
        iim_kernel=3,
        r=3,
        precision="wide",
    ).validate()


@pytest.fixture
def small_model_cfg():
    """32 x 32 inputs like the benchmark, narrow widths."""
    return FfdiConfig(
        num_classes=3,
        encoder_widths=(4, 6, 8, 8),
        decoder_widths=(6, 4),
        iim_kernel=3,
    ).validate()


@pytest.fixture(scope="session")
def tiny_dataset():
    return build_dataset(domains=list(TINY_DOMAINS), classes=3, per_class_per_domain=5, seed=0)


@pytest.fixture
def tiny_train_cfg(small_model_cfg, tmp_path):
    return TrainConfig(
        model=small_model_cfg,
        noise=NoiseConfig(),
        iterations=3,
        batch_per_domain=2,
        milestones=(2,),
        held_out="sketch",
        seeds=(0,),
        domains=TINY_DOMAINS,
        per_class_per_domain=5,
        out_dir=str(tmp_path / "run"),
        log_every=1,
        eval_batch=16,
    ).validate()


@pytest.fixture
def registry(tmp_path, monkeypatch):
    path = tmp_path / "runs.db"
    monkeypatch.setenv("FFDI_DB_PATH", str(path))
    return path
