import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record(criterion, ok, detail):
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
