import pytest

_VERDICTS = []


class Verdicts:
    def __init__(self, capsys):
        self._capsys = capsys

    def __call__(self, criterion, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
        _VERDICTS.append(line)
        with self._capsys.disabled():
            print("\n" + line)
        return ok


@pytest.fixture
def verdict(capsys):
    return Verdicts(capsys)


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
