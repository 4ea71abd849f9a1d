import pathlib

import pytest
from hypothesis import HealthCheck, settings

from streamrecover.fdm import GridSpec, solve_field
from streamrecover.flowfield import ObstacleSpec, PlanarPoint

settings.register_profile("repo", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

REPO = pathlib.Path(__file__).resolve().parents[1]
BUNDLED_SCENARIO = REPO / "scenarios" / "ten_quads_two_failures.yaml"


@pytest.fixture(scope="session")
def disk_field():
    """Unit disk at the origin on [-10, 10]^2, spacing 0.25, K = 1."""
    grid = GridSpec.from_spacing(-10.0, 10.0, -10.0, 10.0, 0.25)
    return solve_field(grid, [ObstacleSpec(PlanarPoint(0.0, 0.0), 1.0)], 1.0)


@pytest.fixture(scope="session")
def empty_field():
    grid = GridSpec.from_spacing(-5.0, 15.0, -5.0, 5.0, 0.25)
    return solve_field(grid, [], 1.0)


# Filled by test_acceptance, echoed at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
