import sys
import time

import pytest

from sourcestrength.montecarlo import ExperimentConfig, Sweep, chamber_v_a, classroom_v_c, run_rmse_vs_n


@pytest.fixture
def chamber():
    return chamber_v_a()


@pytest.fixture
def classroom():
    return classroom_v_c()


@pytest.fixture(scope="session")
def ordering_table():
    """Chamber study at n in {30, 50, 80}, 10^4 trials, all four estimators."""
    cfg = ExperimentConfig.for_experiment("rmse_vs_n", trials=10_000, seed=0,
                                          sweep=Sweep("n", (30, 50, 80)))
    start = time.perf_counter()
    table = run_rmse_vs_n(cfg)
    table.elapsed = time.perf_counter() - start
    return table


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
