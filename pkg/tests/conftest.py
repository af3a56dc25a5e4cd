import time

import pytest

from assocsip.coupling import run_coupling_experiment
from assocsip.fields import FieldModel, tent_kernel
from assocsip.geometry import Parameters

MASTER_SEED = 20240101
SCALES = ((3, 3), (4, 4), (5, 5))


@pytest.fixture(scope="session")
def ma_exponential():
    return FieldModel(2, "moving_average", "centered_exponential", tent_kernel(2))


@pytest.fixture(scope="session")
def scaling_experiment(ma_exponential):
    """The reference coupling run: MA exponential field, 532^2, three diagonal scales, 50 replicates."""
    t0 = time.perf_counter()
    exp = run_coupling_experiment(ma_exponential, Parameters(d=2, alpha=3, beta=2, tau=0.8), (532, 532),
                                  SCALES, 50, MASTER_SEED, eps=0.05, calibration_replicates=2000)
    exp.elapsed = time.perf_counter() - t0
    return exp


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


@pytest.fixture
def record_criterion():
    def record(number, ok, summary, seconds=None):
        timing = "" if seconds is None else f" [{seconds:.2f} s]"
        ACCEPTANCE_LINES[number] = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}: {summary}{timing}"
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
