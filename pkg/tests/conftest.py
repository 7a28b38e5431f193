import pytest

from cascadegrid import CostFunction, bundled_path, parse_config


@pytest.fixture(scope="session")
def study_costs():
    """The three-DG cost set used across the validation scenarios."""
    return (
        CostFunction(0.25),
        CostFunction(0.15),
        CostFunction(0.1, 0.01),
    )


@pytest.fixture(scope="session")
def table1():
    config, schedule = parse_config(bundled_path("table1"))
    return config, schedule
