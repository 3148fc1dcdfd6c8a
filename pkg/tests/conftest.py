import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from actsim import load_fixture  # noqa: E402


@pytest.fixture(scope="session")
def fx():
    return load_fixture()


@pytest.fixture(scope="session")
def world(fx):
    return fx.duet_world()


# acceptance outcomes, filled by test_acceptance.py and printed after the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
