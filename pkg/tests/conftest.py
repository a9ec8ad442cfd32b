import itertools

import numpy as np
import pytest

from dembed.harness import exact_errors

# every bundle the suite builds is checked against the universal lower bound
CONVERSE_TOL = 1e-10


def assert_converse(bundle):
    beta = exact_errors(bundle)
    assert beta.max() >= bundle.beta_star - CONVERSE_TOL


@pytest.fixture
def converse():
    return assert_converse


def brute_iid(p, T):
    """Probability of every sequence by explicit product, lexicographic order."""
    p = np.asarray(p, dtype=float)
    return np.array([np.prod([p[s] for s in seq]) for seq in itertools.product(range(p.size), repeat=T)])


# acceptance lines, printed once at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
