import pytest

_RESULTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_RESULTS] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the test still asserts on ``ok`` itself."""
    results = request.config.stash[_RESULTS]

    def record(name: str, ok: bool | None, detail: str = "") -> bool:
        status = {True: "PASS", False: "FAIL", None: "REPORT"}[ok]
        results.append(f"[{status}] {name}" + (f": {detail}" if detail else ""))
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_RESULTS, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
