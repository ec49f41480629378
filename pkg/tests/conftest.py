import numpy as np
import pytest

from whfl.config import SystemConfig
from whfl.numerics import RngStream
from whfl.topology import sample_topology


@pytest.fixture
def tiny_cfg():
    return SystemConfig(C=2, M=2, K=2, K_ps=2, N=3, I=2)


@pytest.fixture
def small_cfg():
    return SystemConfig(C=2, M=2, K=4, K_ps=4, N=8, I=2)


@pytest.fixture
def topo():
    def make(cfg, seed=0):
        return sample_topology(cfg, RngStream(seed, ("topology",)))
    return make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---- one pass/fail line per acceptance criterion

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when == "teardown":
        return
    # a setup error (e.g. missing data) counts as a failure; a clean setup is not a result
    if call.when == "setup" and call.excinfo is None:
        return
    num, title = mark.args
    ok = call.excinfo is None
    prev = _CRITERIA.get(num, (title, True, ""))
    detail = "" if ok else str(call.excinfo.value).splitlines()[0][:160]
    _CRITERIA[num] = (title, prev[1] and ok, prev[2] or detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[num]
        line = f"criterion {num} ({title}): {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f"  -- {detail}"
        terminalreporter.write_line(line)
