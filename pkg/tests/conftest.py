import math

import numpy as np
import pytest

from nlks import oracle, radialmass as rm

PI = math.pi
EIGHT_PI = 8 * math.pi


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def steady_state(n=256, s_max=1e4, lam=1.0, M0=EIGHT_PI, m0=None, ds0=None, mode=rm.Mode.NORMALIZED):
    p = oracle.GrowthParams(M0, M0 if m0 is None else m0)
    grid = (rm.SGrid.with_first_spacing(n, s_max, ds0) if ds0 is not None
            else rm.SGrid.graded(n, s_max, 3.0))
    fam = oracle.SteadyFamily(lam, EIGHT_PI)
    return rm.init_from_profile(grid, lambda s: oracle.steady_cumulative_s(fam, s), p,
                                variable="s", mode=mode)


#: ``PASS/FAIL criterion N: ...`` lines collected by the acceptance suite.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
