import os
from pathlib import Path

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

from dgsearch.djgraph import build
from dgsearch.instance import load, parse_orlib

DATA = Path(__file__).parent / "data"
TINY_TEXT = "2 2\n0 2 1 3\n1 2 0 4"


@pytest.fixture
def tiny():
    return parse_orlib(TINY_TEXT, "tiny")


@pytest.fixture
def sol_b(tiny):
    return build(tiny, [[(0, 0), (1, 1)], [(0, 1), (1, 0)]])


@pytest.fixture
def sol_a(tiny):
    return build(tiny, [[(0, 0), (1, 1)], [(1, 0), (0, 1)]])


@pytest.fixture
def ft06():
    return load(DATA / "ft06.txt")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
