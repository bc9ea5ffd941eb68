import time
from contextlib import contextmanager

# (number, description, passed, seconds) for every acceptance criterion that ran
ACCEPTANCE: list = []


@contextmanager
def criterion(number: int, description: str, budget_s: float | None = None):
    """Time a block, record PASS/FAIL, and fail it when it overruns its runtime budget."""
    t0 = time.perf_counter()
    ok = False
    try:
        yield
        ok = True
    finally:
        dt = time.perf_counter() - t0
        within = budget_s is None or dt <= budget_s
        ACCEPTANCE.append((number, description, ok and within, dt, budget_s))
    assert within, f"criterion {number} took {dt:.1f} s, budget {budget_s:.0f} s"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, desc, ok, dt, budget in sorted(ACCEPTANCE):
        cap = f", budget {budget:.0f} s" if budget else ""
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {desc} ({dt:.1f} s{cap})")
