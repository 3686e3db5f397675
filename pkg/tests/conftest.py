import pytest

from ctapnoise.dataset import generate_dataset

# PASS/FAIL lines appended by test_acceptance, echoed after the run
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def five_class_data():
    return generate_dataset("five", per_class=500, seed=0)


@pytest.fixture(scope="session")
def four_class_data(five_class_data):
    # classes 1-3 share their random streams and memoized features with the five-class set
    return generate_dataset("four", per_class=500, seed=0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
