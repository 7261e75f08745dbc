import numpy as np
import pytest
from hypothesis import settings

from mse.fields import make_grid

settings.register_profile("mse", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("mse")


@pytest.fixture
def grid33():
    return make_grid(2, (1.0, 1.0), 0.5, (33, 33), 64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {line}")
