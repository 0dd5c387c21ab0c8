import json

import numpy as np
import pytest


def pytest_addoption(parser):
    parser.addoption("--femnist", default=None,
                     help="path to the published FEMNIST-subset LEAF file")

from fedsim import (
    LINEAR_REGRESSION,
    MULTINOMIAL_LOGISTIC,
    DeviceDataset,
    FederatedDataset,
    Objective,
    SynthConfig,
    generate_synthetic,
    make_identical_devices,
)


@pytest.fixture(scope="session")
def small_synth():
    """Heterogeneous 6-device classification dataset, small enough for oracles."""
    return generate_synthetic(SynthConfig(alpha=0.5, beta=0.5, num_devices=6,
                                          input_dim=8, num_classes=4,
                                          min_samples=20, sample_scale=10.0, seed=90))


@pytest.fixture(scope="session")
def small_obj(small_synth):
    return Objective(task=MULTINOMIAL_LOGISTIC, input_dim=small_synth.input_dim,
                     num_classes=small_synth.num_classes)


@pytest.fixture(scope="session")
def logistic_device():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(25, 6))
    y = rng.integers(0, 3, 25)
    return DeviceDataset(features=X, labels=y, device_id=0)


@pytest.fixture(scope="session")
def logistic_obj():
    return Objective(task=MULTINOMIAL_LOGISTIC, input_dim=6, num_classes=3)


@pytest.fixture(scope="session")
def linear_device():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(30, 5))
    w_true = rng.normal(size=5)
    y = X @ w_true + 0.1 * rng.normal(size=30)
    return DeviceDataset(features=X, labels=y, device_id=0)


@pytest.fixture(scope="session")
def linear_obj():
    return Objective(task=LINEAR_REGRESSION, input_dim=5)


@pytest.fixture(scope="session")
def identical_network():
    """Ten devices holding byte-identical data: the B = 1 case."""
    rng = np.random.default_rng(21)
    X = rng.normal(size=(40, 6))
    Wtrue = rng.normal(size=(3, 6))
    y = np.argmax(X @ Wtrue.T, axis=1)
    base = DeviceDataset(features=X, labels=y, device_id=0)
    return make_identical_devices(base, num_devices=10, num_classes=3)


@pytest.fixture()
def leaf_file(tmp_path):
    """Tiny LEAF-style file: 2 users with 3 and 5 samples."""
    doc = {
        "users": ["u1", "u2"],
        "num_samples": [3, 5],
        "user_data": {
            "u1": {"x": [[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]], "y": [0, 1, 0]},
            "u2": {"x": [[0.0, 1.0], [0.2, 0.8], [0.4, 0.6], [0.6, 0.4], [0.8, 0.2]],
                   "y": [1, 0, 1, 1, 0]},
        },
    }
    path = tmp_path / "leaf.json"
    path.write_text(json.dumps(doc))
    return str(path)
