from pathlib import Path

import numpy as np
import pytest

from remex.data import load_csv, load_schema

FIXTURES = Path(__file__).parent / "fixtures"
TOY_CSV = FIXTURES / "toy.csv"
TOY_SCHEMA = FIXTURES / "toy_schema.json"

# lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def toy():
    return load_csv(TOY_CSV, load_schema(TOY_SCHEMA))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
