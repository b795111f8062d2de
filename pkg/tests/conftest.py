import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_box(rng, lim=40):
    t0, f0 = rng.integers(0, lim, size=2)
    w, h = rng.integers(1, lim // 2, size=2)
    return int(t0), int(t0 + w - 1), int(f0), int(f0 + h - 1)


CRITERIA = {}


def record_criterion(n, name, ok, detail):
    """Remember one acceptance result; printed again in the terminal summary."""
    line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {name} ({detail})"
    CRITERIA[n] = line
    return line


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
