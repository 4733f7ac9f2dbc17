import os
import sys
from pathlib import Path

import numpy as np
import pytest

from acudistill.ratings import SparseRatings, load_movielens

HERE = Path(__file__).parent
ROOT = HERE.parent
FIXTURES = HERE / "fixtures"
sys.path.insert(0, str(HERE))


def ml100k_path():
    base = Path(os.environ.get("ACUDISTILL_DATA", ROOT / "data"))
    return base / "ml-100k" / "ratings.csv"


@pytest.fixture(scope="session")
def tiny():
    R, _, _ = load_movielens(FIXTURES / "tiny_ratings.csv")
    return R


@pytest.fixture(scope="session")
def ml100k():
    path = ml100k_path()
    if not path.exists():
        pytest.skip(f"ml-100k not found at {path}; run scripts/fetch_ml100k.py")
    R, _, _ = load_movielens(path)
    return R


def random_sparse(rng, m, n, density=0.4, integer=False):
    mask = rng.random((m, n)) < density
    vals = rng.integers(-3, 4, size=(m, n)).astype(float) if integer else rng.normal(size=(m, n))
    return SparseRatings.from_dense(np.where(mask, vals, 0.0), mask=mask)


_criteria = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.outcome != "passed":
        _criteria[name] = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria):
        number = int(name.split("_")[2])
        label = " ".join(name.split("_")[3:])
        terminalreporter.write_line(f"criterion {number:2d} {_criteria[name]:4s} {label}")
