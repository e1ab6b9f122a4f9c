import numpy as np
import pytest

from nestedtrial.data import CohortDataset


def make_cohort(rng, n=400, frac=0.4, binary=False, p=2):
    x = rng.normal(size=(n, p))
    s = rng.random(n) < 1 / (1 + np.exp(-(np.log(frac / (1 - frac)) + 0.5 * x[:, 0])))
    s[:4] = True
    a = np.where(s, (rng.random(n) < 0.5).astype(float), np.nan)
    a[:4] = [0, 1, 0, 1]
    lin = 0.5 * np.nan_to_num(a) + x @ np.linspace(0.3, 0.6, p)
    if binary:
        y = (rng.random(n) < 1 / (1 + np.exp(-lin))).astype(float)
    else:
        y = lin + rng.normal(size=n)
    return CohortDataset.from_arrays(s, x, a, np.where(s, y, np.nan), treatment_levels=(0, 1))


@pytest.fixture
def cohort():
    return make_cohort(np.random.default_rng(2024))


@pytest.fixture
def binary_cohort():
    return make_cohort(np.random.default_rng(99), binary=True)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
