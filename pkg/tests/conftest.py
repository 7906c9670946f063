import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def report_criterion(request):
    """Record one PASS/FAIL line per acceptance criterion and assert it."""
    lines = request.config.stash.setdefault(_LINES, [])

    def report(number, title, checks):
        failed = [name for name, value, ok in checks if not ok]
        detail = "; ".join(f"{name}={value}" for name, value, _ in checks)
        line = f"criterion {number} ({title}): {'FAIL' if failed else 'PASS'} | {detail}"
        lines.append(line)
        print(line)
        assert not failed, f"criterion {number} failed checks: {failed}"

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
