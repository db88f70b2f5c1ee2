"""Shared fixtures: one full-size toy setup and one small fast setup.

Both are deterministic, so session scope is safe; every test sees the
identical model and data.
"""

import pytest

from topkqp.nn import make_blobs, train_toy


@pytest.fixture(scope="session")
def blob_data():
    return make_blobs(num_classes=10, samples=2000, input_dim=64, sigma=0.08, seed=0)


@pytest.fixture(scope="session")
def blob_model(blob_data):
    model, acc = train_toy(blob_data)
    assert acc >= 0.95
    return model


@pytest.fixture(scope="session")
def small_data():
    return make_blobs(num_classes=6, samples=300, input_dim=16, sigma=0.06, seed=1)


@pytest.fixture(scope="session")
def small_model(small_data):
    model, acc = train_toy(small_data, hidden=(12,), feature_dim=8, epochs=40, seed=1)
    assert acc >= 0.95
    return model
