import numpy as np
import pytest
import torch
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


# -- per-criterion acceptance summary ------------------------------------------

CRITERIA = {
    1: "physics round trip",
    2: "oracle equivalence",
    3: "gradient checks",
    4: "architecture contract",
    5: "loss arithmetic",
    6: "toy end-to-end",
    7: "metric identities",
    8: "determinism & persistence",
}
_outcomes: dict[int, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): exit criterion number n")


def pytest_runtest_logreport(report):
    n = report.user_properties and dict(report.user_properties).get("criterion")
    if not n:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(n, []).append(report.outcome == "passed")


def pytest_runtest_setup(item):
    marker = item.get_closest_marker("acceptance")
    if marker:
        item.user_properties.append(("criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if results is None:
            status = "NOT RUN"
        else:
            status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {n} ({title}): {status}")
