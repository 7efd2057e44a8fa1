import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from urcod.imagedata import SyntheticConfig, generate_synthetic_dataset  # noqa: E402

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_synthetic_dataset(SyntheticConfig(count=6, size=64, seed=3))


def square_mask(size=8, side=4):
    m = np.zeros((size, size))
    lo = (size - side) // 2
    m[lo : lo + side, lo : lo + side] = 1.0
    return m


# -- acceptance summary ---------------------------------------------------

_criteria = {}
NOTES = []  # extra lines for the summary, e.g. desk-study scores


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    failed = report.failed or (report.when == "call" and report.skipped)
    if failed or report.when == "call":
        previous = _criteria.get(number, (title, "PASS"))[1]
        _criteria[number] = (title, "FAIL" if failed or previous == "FAIL" else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status = _criteria[number]
        terminalreporter.write_line(f"{status} criterion {number}: {title}")
    for line in NOTES:
        terminalreporter.write_line(line)
