import pytest

from causalfair import dgp, mitigation
from causalfair.counterfactual import StageSpec, impute_sequential

HIRING_STAGES = (StageSpec("interview", "s", ("x",)), StageSpec("hire", "y", ("x", "s")))


@pytest.fixture(scope="session")
def small_cohort():
    return dgp.generate(dgp.HiringParams(alpha=0.0, beta=0.25, gamma=0.2, n=20_000, seed=11))


@pytest.fixture(scope="session")
def small_imputed(small_cohort):
    return impute_sequential(small_cohort.to_table(), HIRING_STAGES, M=5, seed=3)


@pytest.fixture(scope="session")
def small_benchmark():
    return mitigation.hiring_benchmark(dgp.HiringParams(n=20_000, seed=5), M=4)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
