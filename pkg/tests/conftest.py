import json
from pathlib import Path

import pytest

# criterion number -> (passed, detail); filled by the acceptance tests
CRITERIA: dict[int, tuple[bool, str]] = {}

RESULTS_FILE = Path(__file__).with_name("acceptance_results.json")


@pytest.fixture
def record():
    def _record(n: int, passed: bool, detail: str) -> None:
        CRITERIA[n] = (bool(passed), detail)

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    RESULTS_FILE.write_text(json.dumps({str(n): {"pass": ok, "detail": d} for n, (ok, d) in sorted(CRITERIA.items())},
                                       indent=2))
