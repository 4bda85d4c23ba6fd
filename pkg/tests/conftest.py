import os
import sys

from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

import pytest  # noqa: E402

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(k, ok, detail)`` records and prints one acceptance line."""
    def record(k: int, ok: bool, detail: str) -> bool:
        line = f"C{k} {'PASS' if ok else 'FAIL'}: {detail}"
        _CRITERIA[k] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
