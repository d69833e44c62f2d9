import numpy as np
import pytest

from bilevelkit.problems import cleaning_oracle, gen_cleaning, gen_quadratic

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {n}: {detail}")


@pytest.fixture(scope="session")
def quad():
    return gen_quadratic(0)


@pytest.fixture(scope="session")
def small_quad():
    return gen_quadratic(3, n=4, m=3, N=200)


@pytest.fixture(scope="session")
def clean():
    return cleaning_oracle(gen_cleaning(0, N_i=120, N_v=80, d=5))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
