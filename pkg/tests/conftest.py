import collections

import pytest

# criterion number -> list of (passed, detail)
_ACCEPTANCE = collections.defaultdict(list)


@pytest.fixture
def criterion():
    """``criterion(n, passed, detail)`` records one check of acceptance criterion ``n``."""

    def record(n, passed, detail):
        _ACCEPTANCE[n].append((bool(passed), detail))
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        checks = _ACCEPTANCE[n]
        status = "PASS" if all(ok for ok, _ in checks) else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}")
        for ok, detail in checks:
            terminalreporter.write_line(f"    [{'ok' if ok else 'FAILED'}] {detail}")
