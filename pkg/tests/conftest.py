import numpy as np
import pytest

from tsm_hpo.space import HyperparameterDef, SearchSpace, reference_space


@pytest.fixture
def space():
    return reference_space()


@pytest.fixture
def mini_space():
    """2 x 2 x 2 x 2 grid: every dimension splits into two single-point halves."""
    return SearchSpace([HyperparameterDef(f"x{k}", 0, 1, 1, threshold=1) for k in range(4)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def batch_def(bit_width=None):
    return HyperparameterDef("batch_size", 8, 512, 8, threshold=256, bit_width=bit_width)


ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, elapsed, budget, note in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if ok else "FAIL"
        line = f"[{status}] {number:>2}. {title} ({elapsed:.2f}s / {budget:g}s)"
        if note:
            line += f" -- {note}"
        terminalreporter.write_line(line)
