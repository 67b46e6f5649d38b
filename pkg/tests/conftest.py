import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, title, ok, detail)``."""
    lines = request.config.stash.setdefault(_RESULTS, [])

    def record(number, title, ok, detail=""):
        lines.append((str(number), title, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_RESULTS, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(lines, key=lambda l: (len(l[0].rstrip("ab")), l[0])):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>3}  {title}: {detail}")
