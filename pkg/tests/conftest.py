import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def criterion(request):
    """``criterion(number, ok, detail)`` records a PASS/FAIL line, then asserts ``ok``."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_LINES].append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
