"""Shared trained-model fixtures.

Training is seconds-scale but not free, so the standard skip and exit
fixtures are session-scoped and shared across test modules. Tests must
not mutate them; anything needing a variant copies or retrains.
"""

import pytest

from adnn_energy_lab.data import generate_dataset
from adnn_energy_lab.models import EarlyExitNet, GatedSkipNet


@pytest.fixture(scope="session")
def skip_dataset():
    return generate_dataset(400, noise_span=0.6, seed=0)


@pytest.fixture(scope="session")
def trained_skip(skip_dataset):
    net = GatedSkipNet(epochs=200, seed=0)
    net.fit(skip_dataset.inputs, skip_dataset.labels)
    return net


@pytest.fixture(scope="session")
def exit_dataset():
    return generate_dataset(600, noise_span=0.9, seed=7, contrast=0.1)


@pytest.fixture(scope="session")
def trained_exit(exit_dataset):
    net = EarlyExitNet(entropy_threshold=0.3, epochs=60, seed=0)
    net.fit(exit_dataset.inputs, exit_dataset.labels)
    return net
