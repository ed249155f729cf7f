import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from streamse.config import EngineConfig, FramingConfig, ModelConfig

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_model_cfg():
    """Tiny geometry that keeps scalar-loop oracles fast (11 bins, q=2 -> 6 positions)."""
    return ModelConfig(n_blocks=2, channels=4, hidden=3, freq_compress=2,
                       framing=FramingConfig(l_b=8, l_c=8, l_f=4))


@pytest.fixture(scope="session")
def small_engine(small_model_cfg):
    return EngineConfig(model=small_model_cfg, pre_emphasis=False)


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
