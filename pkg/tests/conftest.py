import logging
import pytest
import torch
from app.core.run_config import RunConfig
from app.services.synthdata_service import SynthDataService


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


TINY_CONFIG = {
    "seed": 7,
    "scene": {
        "image_size": [64, 64],
        "objects_per_image": [1, 3],
        "object_size": [4.0, 12.0],
        "background": "flat",
        "contrast": 0.5,
    },
    "dataset": {"splits": {"train": 4, "val": 2}},
    "model": {
        "backbone": {"channels": 16},
        "detector": {"tower_depth": 1},
    },
    "train": {"epochs": 1, "batch_size": 2, "checkpoint_every": 1},
}


@pytest.fixture
def tiny_config(tmp_path) -> RunConfig:
    config = RunConfig.model_validate(TINY_CONFIG)
    return config.with_overrides(output_dir=str(tmp_path / "run"))


@pytest.fixture
def tiny_dataset(tmp_path, tiny_config):
    out_dir = tmp_path / "data" / "train"
    SynthDataService().write_dataset(tiny_config.scene, 4, tiny_config.seed, out_dir)
    return out_dir


@pytest.fixture
def generator() -> torch.Generator:
    return torch.Generator().manual_seed(0)


@pytest.fixture(autouse=True)
def propagate_app_logs(monkeypatch):
    # logging.ini stops "app" records at its own handler; caplog listens on root
    monkeypatch.setattr(logging.getLogger("app"), "propagate", True)
