import numpy as np
import pytest

from formloc.network import DesiredDistances, Graph

_verdicts = []


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(label): acceptance test that reports a PASS/FAIL verdict line",
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    # setup failures count as FAIL; a clean call counts as the verdict
    if report.when == "call" or (report.when == "setup" and report.failed):
        _verdicts.append((marker.args[0], report.passed))


def pytest_terminal_summary(terminalreporter):
    # runs outside stdout capture, so the verdicts land in piped output
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok in _verdicts:
        terminalreporter.write_line(f"criterion {label}: {'PASS' if ok else 'FAIL'}")


@pytest.fixture
def triangle() -> Graph:
    return Graph.from_one_based(3, [(1, 2), (2, 3), (1, 3)])


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def random_positions(rng, agents, scale=5.0):
    return rng.uniform(-scale, scale, size=(agents, 2))


def uniform_distances(graph, d=10.0):
    return DesiredDistances.uniform(graph.edge_count, d)
