import numpy as np
import pytest

from otss.benchgen import BenchConfig, generate_benchmark
from otss.models import FitConfig


@pytest.fixture(scope="session")
def small_bench():
    return generate_benchmark(BenchConfig(n_train=800, n_total=1400, seed=0))


@pytest.fixture(scope="session")
def fast_cfg():
    return FitConfig(restarts=2, max_epochs=400, patience=30, reg_grid=[1e-3], k_grid=[2, 3], rank_grid=[1, 2])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPT = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPT] = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Append ``(criterion, passed, detail)``; printed as one line each after the run."""
    return request.config.stash[_ACCEPT]


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPT, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for crit, passed, detail in sorted(lines, key=lambda t: (t[0][0], int(t[0][1:]))):
        terminalreporter.write_line(f"{crit:>4} {'PASS' if passed else 'FAIL'}  {detail}")
