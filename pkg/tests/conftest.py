from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from qnpsqd.data import load_fixture

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def reference():
    """pyscf energies frozen by tools/make_fixtures.py."""
    return json.loads((DATA / "pyscf_reference.json").read_text())


@pytest.fixture(scope="session")
def h4():
    return load_fixture("h4_sto3g")


@pytest.fixture(scope="session")
def h6():
    return load_fixture("h6_sto3g")


@pytest.fixture(scope="session")
def h4_631g():
    return load_fixture("h4_631g")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.failed):
        _ACCEPTANCE[number] = (title, "PASS" if report.passed else "FAIL", report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, duration = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {status}  {title}  ({duration:.1f} s)")
