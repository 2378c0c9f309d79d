import re
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from normball.cohort import CohortConfig, generate_cohort  # noqa: E402


@pytest.fixture(scope="session")
def small_cohort():
    return generate_cohort(CohortConfig(num_patients=40, survivor_fraction=0.6, min_length=14,
                                        max_length=30, seed=11))


@pytest.fixture(scope="session")
def medium_cohort():
    return generate_cohort(CohortConfig(num_patients=300, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance verdicts

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion; returns ``ok``."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = re.match(r"test_criterion_(\d+)", item.name)
    if m and rep.failed and int(m.group(1)) not in ACCEPTANCE:
        number = int(m.group(1))
        ACCEPTANCE[number] = f"FAIL criterion {number:2d}: error during {rep.when}: {call.excinfo.typename}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
