import numpy as np
import pytest

from mmpgo.bench.cube import CubeConfig, generate_cube
from mmpgo.bench.synthetic import random_graph

# grid 6 gives 450 poses; the acceptance suite calls this "cube-mini"
CUBE_MINI = CubeConfig(grid=6, seed=0)

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return report
    num, title = mark.args
    results = item.config.stash[_CRITERIA]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        state = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        prev = results.get(num, (title, "PASS"))[1]
        results[num] = (title, "FAIL" if "FAIL" in (prev, state) else state)
    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash[_CRITERIA]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        title, state = results[num]
        terminalreporter.write_line(f"criterion {num:2d} {state}: {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_graphs():
    """A few partitioned toy graphs in 2D and 3D."""
    return [
        random_graph(0, d=2, n=12, robots=2)[0],
        random_graph(1, d=3, n=15, robots=3)[0],
        random_graph(2, d=3, n=10, robots=1)[0],
        random_graph(3, d=2, n=20, robots=4)[0],
    ]


@pytest.fixture(scope="session")
def cube_mini():
    """Single-robot cube-mini graph and its ground truth."""
    return generate_cube(CUBE_MINI)
