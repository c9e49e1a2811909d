import numpy as np
import pytest

from ddgcn import kernels

BACKENDS = {
    "numba": {
        "matmul": kernels._matmul_numba,
        "power": kernels._power_iteration_numba,
        "pairwise": kernels._pairwise_numba,
        "knn": kernels._knn_numba,
    },
    "numpy": {
        "matmul": kernels._matmul_numpy,
        "power": kernels._power_iteration_numpy,
        "pairwise": kernels._pairwise_numpy,
        "knn": kernels._knn_numpy,
    },
}


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    return BACKENDS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


_acceptance = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
