import numpy as np
import pytest

from monotone_follower.costs import quadratic_spec
from monotone_follower.lattice import build_binomial_tree, build_lottery_tree


@pytest.fixture
def lottery():
    return build_lottery_tree(1, [(0.0, 0.5), (2.0, 0.5)])


@pytest.fixture
def binomial3():
    return build_binomial_tree(3, 1.0)


@pytest.fixture
def quad():
    return quadratic_spec()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one "PASS/FAIL criterion N" line per acceptance criterion, filled by test_acceptance
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
