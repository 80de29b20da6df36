import sys

import pytest

from reinsim.config import ExperimentConfig
from reinsim.pipeline import make_env_config


@pytest.fixture(scope="session")
def exp():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def env_cfg(exp):
    return make_env_config(exp)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
