import pytest

from torusnet.config import SimConfig


@pytest.fixture
def small_cfg():
    """A 2x2x2 machine with a reduced core so simulations stay fast."""
    return SimConfig(torus=(2, 2, 2), core_u=4, core_v=6)




# criterion name -> list of (passed, detail), one per test case
ACCEPTANCE_RESULTS: dict = {}


def pytest_runtest_makereport(item, call):
    name = getattr(getattr(item, "function", None), "criterion", None)
    if name and call.when == "call":
        detail = item.funcargs.get("report", {}).get("detail", "")
        ACCEPTANCE_RESULTS.setdefault(name, []).append((call.excinfo is None, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[1])):
        cases = ACCEPTANCE_RESULTS[name]
        status = "PASS" if all(ok for ok, _ in cases) else "FAIL"
        terminalreporter.write_line(f"{name}: {status} " + "; ".join(d for _, d in cases if d))
