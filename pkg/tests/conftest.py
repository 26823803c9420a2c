"""Shared fixtures and the acceptance summary printed at the end of a run."""

import numpy as np
import pytest

from ewplug.data import Dataset

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    number, title = marker.args
    detail = getattr(item, "acceptance_detail", "")
    _ACCEPTANCE[number] = (rep.passed, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, title, detail = _ACCEPTANCE[number]
        line = f"{'PASS' if passed else 'FAIL'}  {number}. {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


@pytest.fixture
def detail(request):
    """Call with a string to attach measured numbers to the acceptance line."""

    def record(text):
        request.node.acceptance_detail = text
        print(text)

    return record


def random_dataset(rng, n, m, with_probs=True, k=None, all_classes=False):
    """Small random dataset; ``all_classes`` forces every label to appear."""
    y = rng.integers(0, m, size=n)
    if all_classes:
        y[:m] = np.arange(m)
        rng.shuffle(y)
    x = rng.standard_normal((n, 2))
    g = rng.integers(0, k, size=n) if k else None
    probs = rng.dirichlet(np.ones(m), size=n) if with_probs else None
    return Dataset(x, y, m, group_ids=g, probs=probs)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
