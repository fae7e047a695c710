import re

import pytest

CRITERIA = {
    1: "rate oracle against enumeration",
    2: "symmetry of collision rates",
    3: "generator consistency",
    4: "total-rate asymptotics",
    5: "moment duality, short drastic",
    6: "moment duality, long drastic",
    7: "moment duality, long soft",
    8: "forward-backward pair coalescence",
    9: "tree-length scaling",
    10: "d_lambda metric identities",
    11: "Mohle coefficients",
    12: "collapse diagnostic",
}

_results = pytest.StashKey[dict]()
_ran = pytest.StashKey[set]()


def pytest_configure(config):
    config.stash[_results] = {}
    config.stash[_ran] = set()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    yield
    m = re.search(r"test_criterion_(\d+)", item.nodeid)
    if m:
        item.config.stash[_ran].add(int(m.group(1)))


@pytest.fixture
def criterion(request):
    """record(number, ok, detail) stores one acceptance outcome for the summary."""
    store = request.config.stash[_results]

    def record(number: int, ok: bool, detail: str):
        store[number] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_results, {})
    ran = config.stash.get(_ran, set())
    if not ran:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k, name in CRITERIA.items():
        if k in store:
            ok, detail = store[k]
            tr.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
        elif k in ran:
            tr.write_line(f"criterion {k:2d} FAIL  {name}: errored before reporting")
        else:
            tr.write_line(f"criterion {k:2d} NOT RUN  {name}")
