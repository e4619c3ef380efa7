import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))
# Checked at import time by the QP module, and inherited by worker processes.
os.environ["ESREG_CHECK_KKT"] = "1"

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_dataset(rng, n=200, p=4, scale=1.0):
    from esreg.core import Dataset

    z = rng.uniform(0, 2, size=(n, p - 1))
    y = 1.0 + z @ np.linspace(0.5, -0.5, p - 1) + scale * rng.standard_normal(n)
    return Dataset.with_intercept(z, y)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
