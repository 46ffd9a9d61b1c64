import numpy as np
import pytest

from parkcast.graph import ScaledLaplacian, build_weight_matrix


def random_travel_times(n, rng, density=0.5):
    """Random directed travel times with some missing links, kept connected by a ring."""
    t = rng.uniform(30, 300, size=(n, n))
    missing = rng.random((n, n)) > density
    ring = np.zeros((n, n), dtype=bool)
    idx = np.arange(n)
    ring[idx, (idx + 1) % n] = True
    ring |= ring.T
    t[missing & ~ring] = np.inf
    t[missing.T & ~ring] = np.inf
    np.fill_diagonal(t, 0.0)
    return t


def random_laplacian(n, rng, density=0.5):
    return ScaledLaplacian.from_graph(build_weight_matrix(random_travel_times(n, rng, density)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record(name, ok, detail=""):
    ACCEPTANCE[name] = (bool(ok), detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
