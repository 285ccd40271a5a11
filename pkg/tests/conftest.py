import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dichotomia import LinearSystem, make_example

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture(scope="session")
def diag_system():
    return LinearSystem.constant(np.diag([0.5, 3.0]))


@pytest.fixture(scope="session")
def nonuniform_system():
    return make_example("nonuniform-scalar", {"lam": 0.7, "eps": 0.1}).linear


@pytest.fixture(scope="session")
def random_system():
    return make_example("random", {"base": [0.5, 3.0], "noise": 0.05, "seed": 1}).linear


@pytest.fixture(scope="session")
def periodic_system():
    return LinearSystem.periodic([np.diag([0.4, 2.0]), np.diag([0.9, 4.5])])


ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record ``acceptance[key] = (passed, detail)``; echoed in the terminal summary."""
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
