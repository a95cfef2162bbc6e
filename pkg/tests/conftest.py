import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from wcdnet.config import toy_config  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_cfg():
    return toy_config(max_epochs=1)


@pytest.fixture
def tiny_model_cfg(toy_cfg):
    cfg = toy_cfg.model
    cfg.input_size = (32, 32)
    return cfg


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
    yield


# acceptance reporting: tests marked ``criterion(n, title)`` are aggregated
# into one PASS/FAIL line per criterion in the terminal summary
ACCEPTANCE: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def _entry(marker) -> dict:
    number, title = marker.args
    return ACCEPTANCE.setdefault(number, {"title": title, "failed": [], "passed": 0, "notes": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    entry = _entry(marker)
    if rep.failed or (rep.skipped and rep.when != "teardown"):
        entry["failed"].append(item.name)
    elif rep.when == "call" and rep.passed:
        entry["passed"] += 1


@pytest.fixture
def note(request):
    """Attach a measured value to the criterion line of the current test."""
    marker = request.node.get_closest_marker("criterion")
    entry = _entry(marker) if marker else {"notes": []}
    return entry["notes"].append


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        entry = ACCEPTANCE[number]
        status = "FAIL" if entry["failed"] or not entry["passed"] else "PASS"
        line = f"criterion {number:2d} {status}: {entry['title']}"
        if entry["notes"]:
            line += " [" + "; ".join(entry["notes"]) + "]"
        if entry["failed"]:
            line += " failing: " + ", ".join(entry["failed"])
        terminalreporter.write_line(line)
