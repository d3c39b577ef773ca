"""Shared fixtures: validated catalog problems and a slow-box hypothesis profile."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from exitrate.problems import problem_by_name, validate_problem

settings.register_profile(
    "unit",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("unit")


@pytest.fixture(scope="session")
def bm_interval():
    return validate_problem(problem_by_name("bm-interval"))


@pytest.fixture(scope="session")
def drift_interval():
    return validate_problem(problem_by_name("drift-interval"))


@pytest.fixture(scope="session")
def rect_2d():
    return validate_problem(problem_by_name("rect-2d"))


@pytest.fixture(scope="session")
def bang_bang():
    return validate_problem(problem_by_name("bang-bang"))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260814)
