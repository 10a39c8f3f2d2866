import pytest

from carboncert import pipeline

# pass/fail lines recorded by tests/test_acceptance.py, echoed after the run
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def sim_day(tmp_path_factory):
    """One fault-free simulated day through the full pipeline, shared read-only."""
    home = tmp_path_factory.mktemp("sim-day")
    config = pipeline.RunConfig(home=home, date="2025-06-01", seed=7)
    result = pipeline.run_simulation(config)
    return config, result


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
