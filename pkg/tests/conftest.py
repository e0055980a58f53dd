import pytest

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, list] = {}


@pytest.fixture
def acceptance_detail(request):
    """Free-text detail line for the acceptance summary of the calling criterion."""
    n = request.node.get_closest_marker("criterion").args[0]
    entry = ACCEPTANCE.setdefault(n, [None, ""])

    def note(text):
        entry[1] = text
    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    entry = ACCEPTANCE.setdefault(marker.args[0], [None, ""])
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        entry[0] = rep.passed
        if rep.failed and not entry[1]:
            entry[1] = str(rep.longrepr).strip().splitlines()[-1][:160]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        status = "PASS" if ok else ("FAIL" if ok is False else "NOT RUN")
        tr.write_line(f"criterion {n:2d}: {status}  {detail}")
