import numpy as np
import pytest

from floodrisk import _backend
from floodrisk.geometry import TractPolygon
from floodrisk.graph import TractGraph


def square(tid, x0, y0, size=1.0):
    return TractPolygon(tid, [(x0, y0), (x0 + size, y0), (x0 + size, y0 + size),
                              (x0, y0 + size), (x0, y0)])


def path_graph(ids="abcde"):
    ids = list(ids)
    return TractGraph(ids, list(zip(ids[:-1], ids[1:])))


@pytest.fixture
def path5():
    return path_graph("abcde")


@pytest.fixture(params=_backend.available())
def backend(request):
    """Each available kernel implementation in turn."""
    return _backend.get(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
