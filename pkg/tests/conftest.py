import pytest

from zstretch import LensGeometry

import pinned

_ACCEPTANCE_LINES = []


def record_criterion(number: int, passed: bool, detail: str):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    _ACCEPTANCE_LINES.append((number, line))
    print(line)


@pytest.fixture
def ref_geom():
    return LensGeometry(pinned.REF_R, pinned.REF_Z, pinned.REF_R1)


@pytest.fixture
def small_geom():
    return LensGeometry.with_taper_aperture(1.0, 0.5)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
