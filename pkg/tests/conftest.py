import csv
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "pollnet" / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def holdout_pairs():
    with open(FIXTURES / "holdout_pairs.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(r["pollutant"], float(r["desired"]), float(r["actual"])) for r in rows]


@pytest.fixture
def training_sample():
    with open(FIXTURES / "training_sample.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS, format_line
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(format_line(n, *RESULTS[n]))
