import os
from importlib import resources

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = str(resources.files("buglistener.data").joinpath("fixtures"))
TEST_FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def fixture_path(name):
    return os.path.join(FIXTURES, name)


@pytest.fixture(scope="session")
def encoder():
    from buglistener.encoder import ContextualEncoder, EncoderConfig

    return ContextualEncoder(EncoderConfig())


@pytest.fixture(scope="session")
def small_encoder():
    from buglistener.encoder import ContextualEncoder, EncoderConfig

    return ContextualEncoder(EncoderConfig(hidden_size=64, num_heads=2, intermediate_size=128,
                                           vocab_size=2048, max_tokens=64))


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
