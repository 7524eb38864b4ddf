import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar ``f`` w.r.t. every entry of float64 array ``x``."""
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gf[i] = (up - down) / (2 * eps)
    return g


# one PASS/FAIL line per acceptance criterion, printed in the terminal summary
_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "failed": [], "passed": 0})
    if rep.failed:
        entry["failed"].append(item.name)
    elif rep.passed:
        entry["passed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        status = "FAIL" if e["failed"] else "PASS" if e["passed"] else "NOT RUN"
        detail = f"  ({', '.join(e['failed'])})" if e["failed"] else ""
        terminalreporter.write_line(f"criterion {number}: {status}  {e['title']}{detail}")
