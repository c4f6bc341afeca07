import pytest

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """``record(k, ok, detail)`` stores the summary line of acceptance criterion ``k``."""

    def record(k: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[k] = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_ACCEPTANCE[k])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
