import csv
from pathlib import Path

import numpy as np
import pytest

from connlatent.data import Dataset, Label, Sex, SubjectRecord

FIXTURES = Path(__file__).parent / "fixtures"

# criterion number -> (title, passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def record_criterion(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)
    print(f"[criterion {number:>2}] {'PASS' if passed else 'FAIL'}  {title}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{number:>2}. {'PASS' if passed else 'FAIL'}  {title}  {detail}")


def table1_counts():
    with open(FIXTURES / "table1.csv", newline="") as fh:
        return [{k: int(v) for k, v in row.items()} for row in csv.DictReader(fh) if row["site"]]


def dataset_from_counts(rows, feature_dim=3, seed=0):
    """A dataset with the given per-site class counts and random features."""
    rng = np.random.default_rng(seed)
    records = []
    for row in rows:
        for label, count in ((Label.CONTROL, row["control"]), (Label.ASD, row["asd"])):
            for _ in range(count):
                records.append(SubjectRecord(f"s{len(records)}", row["site"], 20.0, Sex.MALE, label))
    return Dataset(tuple(records), rng.standard_normal((len(records), feature_dim)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
