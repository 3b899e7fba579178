import numpy as np
import pytest

from molr.datagen import random_molecule


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_molecules(rng):
    return [random_molecule(int(rng.integers(1, 7)), rng) for _ in range(8)]


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in mod.REPORT:
            terminalreporter.write_line(line)
