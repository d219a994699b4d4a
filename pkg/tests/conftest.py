import math

import pytest

from amo.arithmetic import GOLDEN, expand

GOLDEN_FLOAT = (math.sqrt(5.0) - 1.0) / 2.0


@pytest.fixture(scope="session")
def golden_cf():
    return expand(GOLDEN, 30)


@pytest.fixture
def golden():
    return GOLDEN_FLOAT


# ── acceptance report ───────────────────────────────────────────────

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion; lines are echoed at the end of the run."""

    def record(number: int, title: str, ok: bool, detail: str, elapsed: float, limit: float):
        status = "PASS" if ok and elapsed < limit else "FAIL"
        line = (f"criterion {number:2d} {status}  {title}: {detail} "
                f"[{elapsed:.2f} s of {limit:g} s]")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return status == "PASS"

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
