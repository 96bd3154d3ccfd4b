import pytest

from iths.adversary import AdversarySpec
from iths.sim import SimConfig, run

# filled by test_acceptance.py: criterion number -> (passed, detail)
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def happy(n, f=None, **cfg):
    """An all-honest run with unanimous input A."""
    f = (n - 1) // 3 if f is None else f
    return run(SimConfig(n, f, **cfg), AdversarySpec(), ["A"] * n)


@pytest.fixture
def happy_run():
    return happy
