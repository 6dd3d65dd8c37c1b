import pytest

_CRITERIA: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture
def criterion():
    """Record sub-results of an acceptance criterion: criterion(k, ok, detail)."""
    def record(k: int, ok: bool, detail: str = "") -> bool:
        _CRITERIA.setdefault(k, []).append((bool(ok), detail))
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        results = _CRITERIA[k]
        ok = all(r for r, _ in results)
        failed = [d for r, d in results if not r]
        line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  ({len(results)} checks)"
        if failed:
            line += "  failing: " + "; ".join(failed[:5])
        terminalreporter.write_line(line)
