import math

import numpy as np
import pytest
from hypothesis import settings

from mfgibbs.models import ising_pspin, rotator

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

T_HALF = math.log(2.0) / 2.0

# One line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ising_weak():
    """Ising p=2, beta=0.5 at t = ln2 / 2 (h_t = -log(3)/2)."""
    return ising_pspin(0.5, 2, T_HALF).model()


@pytest.fixture(scope="session")
def ising_strong():
    """Ising p=2, beta=2, t=5: the symmetric double-well regime."""
    return ising_pspin(2.0, 2, 5.0).model()


@pytest.fixture(scope="session")
def rotator_cert():
    """Certified circle rotator q=2, beta=0.2, t=0.1 (L about 0.8526)."""
    return rotator(2, 0.2, 0.1).model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
