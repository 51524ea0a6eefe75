import numpy as np
import pytest

from softquant import harness
from softquant.config import RunConfig


def tiny_config(**overrides) -> RunConfig:
    """Small, fast config for unit tests (not the reference setup)."""
    base = dict(
        blob_classes=4,
        blob_dim=12,
        blob_train=600,
        blob_test=400,
        blob_separation=3.0,
        blob_label_noise=0.0,
        hidden=(24, 24),
        pretrain_epochs=6,
        epochs=4,
        h=0.5,
        w=0.4,
        seed=11,
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture(scope="session")
def tiny_cfg() -> RunConfig:
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_data(tiny_cfg):
    return harness.load_dataset(tiny_cfg)


@pytest.fixture(scope="session")
def tiny_pretrained(tiny_cfg, tiny_data):
    return harness.pretrain(tiny_cfg, tiny_data)


@pytest.fixture(scope="session")
def tiny_pipeline(tiny_cfg, tiny_pretrained):
    return harness.run_pipeline(tiny_cfg, pretrained=tiny_pretrained.model.copy())


def rng(seed=0):
    return np.random.default_rng(seed)
