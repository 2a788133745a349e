import time
from contextlib import contextmanager

import numpy as np
import pytest

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion(request):
    """Context manager that records one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    @contextmanager
    def run(number: int, title: str):
        t0 = time.perf_counter()
        try:
            yield
        except BaseException as exc:
            msg = str(exc).splitlines()[0] if str(exc) else ""
            line = f"[FAIL] {number:2d} {title} ({time.perf_counter() - t0:.1f} s) {type(exc).__name__}: {msg}"
            lines.append(line)
            print(line)
            raise
        line = f"[PASS] {number:2d} {title} ({time.perf_counter() - t0:.1f} s)"
        lines.append(line)
        print(line)

    return run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
