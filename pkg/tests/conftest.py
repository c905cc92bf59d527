import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from voxmotion.geometry import toy_skeleton
from voxmotion.uiv import default_spec, desk_spec

settings.register_profile("repo", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

# acceptance results, filled by tests/test_acceptance.py and printed at the end of the run
ACCEPTANCE: dict = {}


@pytest.fixture
def topo():
    return toy_skeleton()


@pytest.fixture
def spec48():
    return default_spec()


@pytest.fixture
def spec16():
    return desk_spec()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("abc")), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
