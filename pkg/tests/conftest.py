"""Shared fixtures plus the acceptance-verdict reporting hook."""

import os

import pytest

from ldperc import perc

CACHE = os.path.join(os.path.dirname(__file__), ".cache")

# one line per acceptance criterion, echoed after the run so the verdicts
# survive pytest's output capture
_verdict_lines = []


@pytest.fixture(scope="session")
def calib_cache_dir():
    os.makedirs(CACHE, exist_ok=True)
    return CACHE


@pytest.fixture(scope="session")
def cal_fine(calib_cache_dir):
    # one table at the finest routine mesh; coarser meshes share it so the
    # normalization is consistent across resolutions
    return perc.calibrate_alpha4(
        2**-7, [2**-4, 2**-3, 2**-2], 3000, 1234,
        cache_dir_override=calib_cache_dir,
    )


@pytest.fixture
def verdict():
    def _record(line: str) -> None:
        _verdict_lines.append(line)
        print(line)
    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _verdict_lines:
        terminalreporter.section("acceptance criteria")
        for line in _verdict_lines:
            terminalreporter.write_line(line)
