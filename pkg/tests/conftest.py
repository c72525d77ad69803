import numpy as np
import pytest

from ddfeedback.lti_core import LtiSystem, random_system


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def scalar_sys():
    return LtiSystem([[0.5]], [[1.0]], [[1.0]], [[0.0]], [[1.0]])


@pytest.fixture
def sys3(rng):
    return random_system(3, 2, 2, 2, rng)


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record a one-line detail for an acceptance criterion."""
    notes = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(detail):
        notes[request.node.nodeid] = detail

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    notes = config.stash.get(ACCEPTANCE_KEY, {})
    reports = [r for key in ("passed", "failed") for r in terminalreporter.stats.get(key, [])
               if r.when == "call" and "test_acceptance.py::test_criterion" in r.nodeid]
    if not reports:
        return
    terminalreporter.section("acceptance criteria")
    for rep in sorted(reports, key=lambda r: r.nodeid):
        name = rep.nodeid.split("::")[-1].replace("test_criterion_", "")
        status = "PASS" if rep.passed else "FAIL"
        terminalreporter.write_line(f"{status} {name}: {notes.get(rep.nodeid, '')}")
