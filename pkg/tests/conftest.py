import contextlib

import pytest

_VERDICTS: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """Context manager recording one acceptance verdict: ``with criterion(n, title) as notes``."""

    @contextlib.contextmanager
    def record(number: int, title: str):
        notes: list[str] = []
        try:
            yield notes
        except BaseException as exc:
            first = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            _VERDICTS[number] = (title, False, "; ".join(notes + [first]))
            raise
        _VERDICTS[number] = (title, True, "; ".join(notes))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        title, ok, detail = _VERDICTS[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
