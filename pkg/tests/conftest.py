import math

import numpy as np
import pytest

from perceval.core import Box3D

_criteria: dict[int, list[tuple[str, str]]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    number = getattr(report, "criterion", None)
    if number is not None:
        _criteria.setdefault(number, []).append((report.nodeid, report.outcome))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        results = _criteria[number]
        ok = all(outcome == "passed" for _, outcome in results)
        names = ", ".join(nodeid.split("::")[-1] for nodeid, _ in results)
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  ({names})")


def random_box(rng, category="REGULAR_VEHICLE", spread=3.0, score=None) -> Box3D:
    return Box3D(
        center=(*rng.uniform(-spread, spread, 2), rng.uniform(-1, 1)),
        size=tuple(rng.uniform(0.5, 5.0, 3)),
        yaw=rng.uniform(-math.pi, math.pi),
        velocity=tuple(rng.normal(0, 3, 2)),
        score=rng.uniform() if score is None else score,
        category=category,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
