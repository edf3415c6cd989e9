"""Shared fixtures: the standard schedule and the pretrained grid denoiser."""

import pytest

from fdsampler.denoisers import load_mlp
from fdsampler.experiments import default_fixture_path
from fdsampler.schedule import make_linear_schedule


@pytest.fixture(scope="session")
def sched1000():
    return make_linear_schedule(1000)


@pytest.fixture(scope="session")
def fixture_model():
    return load_mlp(default_fixture_path())
