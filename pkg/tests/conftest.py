import pytest

from lsrb import problems, rb


@pytest.fixture(scope="session")
def small_1p():
    return problems.make_problem("thermal1", 8, 2)


@pytest.fixture(scope="session")
def small_3p():
    return problems.make_problem("thermal3", 4, 2)


@pytest.fixture(scope="session")
def small_1p_train(small_1p):
    return problems.sample_training_set(small_1p, 20)


@pytest.fixture(scope="session")
def small_1p_model(small_1p, small_1p_train):
    return rb.greedy_offline(small_1p, small_1p_train, scm_eps=0.1)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
