"""Shared fixtures: the stock configuration, its device layout, one channel draw."""

import pytest

from fduav import channel
from fduav.model import default_config, reference_layout


@pytest.fixture(scope="session")
def cfg():
    return default_config()


@pytest.fixture(scope="session")
def layout():
    return reference_layout()


@pytest.fixture(scope="session")
def chans(cfg):
    return channel.sample_channels(cfg)
