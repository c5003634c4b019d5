import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_stable(rng, n, radius=0.9):
    """Random real matrix with spectral radius ``radius``."""
    A = rng.standard_normal((n, n))
    return radius * A / np.max(np.abs(np.linalg.eigvals(A)))


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: _criterion_key(s.split()[1])):
            terminalreporter.write_line(line)


def _criterion_key(cid):
    digits = "".join(ch for ch in cid if ch.isdigit())
    return int(digits), cid
