import numpy as np
import pytest

from ddgan.networks import ModelBundle, NetworkConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return NetworkConfig(
        feature_dim=6, latent_dim=5, embed_dim=5,
        encoder_hidden=(7, 6), mapper_hidden=(4, 5),
        generator_hidden=(6, 7), discriminator_hidden=(5, 4),
    )


@pytest.fixture
def tiny_model(tiny_config):
    return ModelBundle(tiny_config, seed=3)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
