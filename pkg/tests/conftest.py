import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def acceptance(request, capsys):
    """Record one PASS/FAIL line for an acceptance criterion; all lines are echoed again at the end."""
    lines = request.config.stash[_LINES]

    def report(number: int, ok: bool, detail: str) -> None:
        line = f"acceptance {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        with capsys.disabled():
            print(f"\n{line}")

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
