import os
import sys

import numpy as np
import pytest

from shapg.data import Dataset

HERE = os.path.dirname(__file__)
DATA_DIR = os.path.join(HERE, "data")
STUB_DIR = os.path.join(HERE, "stubs")
BOSTON = os.path.join(DATA_DIR, "boston_housing.csv")

_criteria = []


def stub(name, *args):
    return [sys.executable, os.path.join(STUB_DIR, name), *args]


def planted_dataset(seed, n=300, n_noise=8, signal=(5.0, 2.0), noise_sd=1.0):
    """y = 5*x1 + 2*x2 + eps with independent noise columns x3..."""
    rng = np.random.default_rng(seed)
    p = len(signal) + n_noise
    X = rng.normal(size=(n, p))
    y = X[:, : len(signal)] @ np.asarray(signal) + rng.normal(scale=noise_sd, size=n)
    names = [f"x{i + 1}" for i in range(p)]
    return Dataset(X, y, names)


def write_csv(path, names, X, y, target="y"):
    with open(path, "w") as fh:
        fh.write(",".join(list(names) + [target]) + "\n")
        for row, t in zip(X, y):
            fh.write(",".join(repr(float(v)) for v in row) + "," + repr(float(t)) + "\n")
    return str(path)


@pytest.fixture
def planted_csv(tmp_path):
    d = planted_dataset(3)
    return write_csv(tmp_path / "planted.csv", d.feature_names, d.features, d.target)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _criteria.append((mark.args[0], mark.args[1], rep.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n, text, outcome in sorted(_criteria, key=lambda c: c[0]):
        flag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{flag}] criterion {n:>2}: {text}")
