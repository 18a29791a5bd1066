import os
import sys
import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from classes.synthetic import SyntheticSpec, generate_synthetic, write_synthetic  # noqa: E402
from classes.train_config import TrainConfig  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs on the default synthetic spec")


TINY_SPEC = dict(n_fields=6, n_informative=3, vocab_sizes=5, n_records=600, seed=3, weight_scale=2.0)


@pytest.fixture
def tiny_data_dir(tmp_path):
    spec = SyntheticSpec(**TINY_SPEC)
    directory = str(tmp_path / "synthetic")
    write_synthetic(generate_synthetic(spec), spec, directory)
    return directory


@pytest.fixture
def tiny_config(tiny_data_dir, tmp_path):
    return TrainConfig(batch_size=64, r=0.5, d1=4, d2=2, max_epochs=2, lr=0.01, seed=1, hidden_dims=(8,),
                       data=tiny_data_dir, out=str(tmp_path / "runs"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run tests marked slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
