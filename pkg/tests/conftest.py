import numpy as np
import pytest

from fiscalstate.data import Dataset, QuarterIndex
from fiscalstate.simulate import synthetic_fiscal_data

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    def _report(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok
    return _report


@pytest.fixture(scope="session")
def fiscal():
    """Synthetic fiscal dataset, security records and the true spending shock."""
    return synthetic_fiscal_data(T=240, seed=3, start="1890Q1")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(columns: dict, start="1950Q1") -> Dataset:
    return Dataset(QuarterIndex.parse(start), columns)
