import numpy as np
import pytest
from hypothesis import strategies as st


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def distributions(min_size=1, max_size=8):
    """Hypothesis strategy for probability vectors (with exact zeros allowed)."""
    weights = st.lists(
        st.one_of(st.just(0.0), st.floats(1e-6, 1.0)), min_size=min_size, max_size=max_size
    ).filter(lambda w: sum(w) > 0)
    return weights.map(lambda w: np.asarray(w) / sum(w))


_acceptance = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, duration in _acceptance:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}  ({duration:.1f} s)")
