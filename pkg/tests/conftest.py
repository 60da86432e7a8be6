import warnings
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def random_polytope(rng, n, extra=None, radius=1.0):
    """Bounded polytope: a box of half-width ``radius`` cut by random halfspaces that keep the origin inside."""
    extra = int(rng.integers(1, 2 * n + 2)) if extra is None else extra
    box_a = np.vstack([np.eye(n), -np.eye(n)])
    box_b = np.full(2 * n, radius)
    cuts = rng.normal(size=(extra, n))
    offs = rng.uniform(0.2, 1.0, extra) * radius
    return np.vstack([box_a, cuts]), np.concatenate([box_b, offs])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
