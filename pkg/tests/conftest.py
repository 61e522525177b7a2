import pytest

VERDICT_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICT_KEY] = []


@pytest.fixture
def verdict(request):
    """Print and record one ``criterion #N PASS|FAIL`` line, then assert it."""
    lines = request.config.stash[VERDICT_KEY]

    def record(n, ok, detail):
        line = f"criterion #{n} {'PASS' if ok else 'FAIL'}: {detail}"
        print(line)
        lines.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(VERDICT_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("#")[1].split()[0])):
            terminalreporter.write_line(line)
