import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from scarlab.model import ChainModel


@pytest.fixture(scope="session")
def model6():
    return ChainModel(6, 1)


@pytest.fixture(scope="session")
def model8():
    return ChainModel(8, 1)


# acceptance criteria report: one line per criterion in the terminal summary
ACCEPTANCE: dict = {}


def record(criterion: int, label: str, passed: bool, detail: str = "", known: str = ""):
    ACCEPTANCE.setdefault(criterion, []).append((label, bool(passed), detail, known))
    print(f"criterion {criterion} [{label}]: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[c]
        ok = all(p for _, p, _, _ in parts)
        tr.write_line(f"criterion {c}: {'PASS' if ok else 'FAIL'}")
        for label, p, detail, known in parts:
            note = f"  (known: {known})" if known and not p else ""
            tr.write_line(f"    {'ok  ' if p else 'FAIL'} {label}: {detail}{note}")
