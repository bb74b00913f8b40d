import time
from contextlib import contextmanager

# criterion number -> (passed, description, seconds, detail)
ACCEPTANCE = {}


@contextmanager
def criterion(number: int, description: str, budget_s=None):
    """Record the outcome of one acceptance criterion; the line is printed in the summary."""
    start = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - start
        if budget_s is not None and elapsed > budget_s:
            raise AssertionError(f"took {elapsed:.2f}s, budget {budget_s}s")
    except BaseException as exc:
        ACCEPTANCE[number] = (False, description, time.perf_counter() - start, f"{type(exc).__name__}: {exc}"[:200])
        print(f"FAIL criterion {number}: {description}")
        raise
    else:
        ACCEPTANCE[number] = (True, description, elapsed, "")
        print(f"PASS criterion {number}: {description} ({elapsed:.2f}s)")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, description, seconds, detail = ACCEPTANCE[number]
        line = f"{'PASS' if ok else 'FAIL'}  {number:>2}  {description}  [{seconds:.2f}s]"
        if detail:
            line += f"  -- {detail}"
        terminalreporter.write_line(line)
