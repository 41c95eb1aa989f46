import numpy as np
import pytest

from cattle_tfd.dataset import IMURecording


def make_recording(labels, animal="cow01", seed=0):
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    return IMURecording(animal, rng.normal(size=(9, labels.size)), labels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance tests append (criterion, passed, detail); printed after the run.
ACCEPTANCE_RESULTS = []


def record(criterion, passed, detail):
    ACCEPTANCE_RESULTS.append((criterion, bool(passed), detail))
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {criterion:>2}: {detail}")
