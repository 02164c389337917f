import math

import numpy as np
import pytest

from quantmil.core import Bag, Dataset

# worked example: 11 instances in two features
TWO_FEATURE_POINTS = [
    (2.1, 3.9), (0.9, 5.5), (8.0, 3.0), (7.0, 3.6), (8.6, 2.8), (7.6, 1.3),
    (7.9, 4.1), (5.0, 2.9), (5.5, 3.6), (6.4, 1.1), (6.6, 2.1),
]

_acceptance = {}


@pytest.fixture
def two_feature_bag():
    return Bag.from_matrix("toy", np.array(TWO_FEATURE_POINTS), 0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


def make_dataset(groups, class_names=("a", "b")):
    """``groups``: list of (label, instance matrix)."""
    bags = [Bag.from_matrix(f"b{i:02d}", np.asarray(X, float), lab) for i, (lab, X) in enumerate(groups)]
    return Dataset(tuple(bags), tuple(class_names), np.asarray(groups[0][1]).shape[1])


def brute_force_quantile(values, q):
    s = sorted(float(v) for v in values)
    return s[min(math.floor(q * len(s)), len(s) - 1)]


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        _acceptance[report.nodeid.split("::", 1)[1]] = report.outcome
    elif "test_acceptance.py" in report.nodeid and report.when == "setup" and report.skipped:
        _acceptance[report.nodeid.split("::", 1)[1]] = "skipped"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance.items():
        tag = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{tag:7s} {name}")
