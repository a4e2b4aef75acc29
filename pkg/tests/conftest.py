from __future__ import annotations

import numpy as np
import pytest

from hcp.robots import SamplingRanges, build_pool, sample_robot


@pytest.fixture(scope="session")
def type_i():
    return sample_robot("I", SamplingRanges.manipulator(), 7)


@pytest.fixture(scope="session")
def mixed_pool():
    return build_pool(list("ABCDEFGHI"), 3, SamplingRanges.manipulator(), seed=11)


@pytest.fixture(scope="session")
def hopper():
    return sample_robot("HOPPER", SamplingRanges.hopper(), 3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance report ----------------------------------------------------------

_CRITERIA: dict = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    n = mark.args[0]
    failed = call.excinfo is not None
    detail = dict(item.user_properties).get("detail", "")
    if failed and not detail:
        detail = call.excinfo.exconly().splitlines()[0][:160]
    prev = _CRITERIA.get(n, (True, ""))
    _CRITERIA[n] = (prev[0] and not failed, "; ".join(x for x in (prev[1], detail) if x))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
