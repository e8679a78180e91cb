import time

import pytest

_ACCEPTANCE_LINES: list[str] = []


class Criterion:
    """Times one acceptance criterion and records a PASS/FAIL line for the summary."""

    def __init__(self, name: str, limit_s: float):
        self.name = name
        self.limit_s = limit_s
        self.detail = ""

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        in_time = elapsed < self.limit_s
        ok = exc_type is None and in_time
        line = f"[{'PASS' if ok else 'FAIL'}] {self.name}: {self.detail or exc or ''}" \
               f" ({elapsed:.1f} s, limit {self.limit_s:g} s)"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        if exc_type is None and not in_time:
            raise AssertionError(f"runtime {elapsed:.1f} s exceeds the {self.limit_s:g} s limit")
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
